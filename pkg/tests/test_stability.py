import json

import numpy as np
import pytest

from circlaw import dyson, stability
from conftest import seeded_flat_profile

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture(scope="module")
def asym_28():
    return seeded_flat_profile(28, seed=23)


def build_at(profile, eta, tau):
    sol = dyson.solve(profile, eta, tau)
    return sol, stability.build(profile, sol)


class TestBuild:
    def test_constant_tau_zero_t_is_minus_identity(self, constant_16):
        # exact identity, realized up to the solver's converged residual
        _, ops = build_at(constant_16, 1.0, 0.0)
        assert np.abs(ops.T + np.eye(2 * 16)).max() <= 1e-11

    def test_constant_norm_f_closed_form(self, constant_16):
        sol, ops = build_at(constant_16, 1.0, 0.0)
        u = GOLDEN / (1.0 + GOLDEN)
        assert abs(ops.norm_F - u) <= 1e-10
        assert abs(ops.norm_F - 0.381966011) <= 1e-9

    def test_factorization_identity(self, asym_28):
        for eta, tau in [(1.0, 0.0), (0.1, 0.3), (0.01, 0.8), (0.2, 1.7)]:
            _, ops = build_at(asym_28, eta, tau)
            assert stability.factorization_residual(ops) <= 1e-10

    def test_v_diagonal_positive(self, asym_28):
        sol, ops = build_at(asym_28, 0.3, 0.6)
        expected = np.sqrt(sol.v_tilde / (sol.u2 * sol.v))
        assert np.allclose(ops.v_diag, expected)
        assert np.all(ops.v_diag > 0)
        assert np.array_equal(ops.V, np.diag(ops.v_diag))

    def test_t_symmetric_norm_one(self, asym_28):
        _, ops = build_at(asym_28, 0.2, 0.5)
        assert np.abs(ops.T - ops.T.T).max() == 0.0
        assert abs(np.abs(ops.T).sum(axis=1).max() - 1.0) <= 1e-12  # inf norm is 1

    def test_f_symmetric_block_structure(self, asym_28):
        n = asym_28.n
        _, ops = build_at(asym_28, 0.2, 0.5)
        assert np.abs(ops.F - ops.F.T).max() <= 1e-15
        assert np.abs(ops.F[:n, :n]).max() == 0.0
        assert np.abs(ops.F[n:, n:]).max() == 0.0

    def test_f_plus_positive_f_minus_mirror(self, asym_28):
        n = asym_28.n
        _, ops = build_at(asym_28, 0.2, 0.5)
        assert np.all(ops.f_plus > 0)
        assert np.allclose(ops.f_minus[:n], ops.f_plus[:n])
        assert np.allclose(ops.f_minus[n:], -ops.f_plus[n:])
        assert abs(np.mean(ops.f_plus ** 2) - 1.0) <= 1e-12  # normalized l2


class TestNormFormula:
    def test_constant_profile(self, constant_16):
        sol, ops = build_at(constant_16, 1.0, 0.0)
        val = stability.norm_f_formula(ops, sol)
        assert abs(val - (1.0 - 1.0 / (1.0 + GOLDEN))) <= 1e-12
        assert abs(val - ops.norm_F) <= 1e-8

    def test_inside_regime_one_minus_norm_scales_with_eta(self, asym_28):
        sol, ops = build_at(asym_28, 0.01, 0.5)
        gap = 1.0 - stability.norm_f_formula(ops, sol)
        assert 0.05 * 0.01 <= gap <= 20.0 * 0.01

    def test_outside_regime_gap_order_one(self, asym_28):
        sol, ops = build_at(asym_28, 0.01, 2.0)
        assert 1.0 - stability.norm_f_formula(ops, sol) >= 0.05


class TestIdentities:
    def test_adjoint_cancellation_exact(self, asym_28):
        sol, ops = build_at(asym_28, 0.1, 0.3)
        rep = stability.verify_identities(ops, sol)
        assert rep.adjoint_residual <= 1e-9

    def test_constant_spectrum_t_near_limit(self, constant_16):
        sol, ops = build_at(constant_16, 1e-8, 0.5)
        eig = np.sort(np.linalg.eigvalsh(ops.T))
        expected = np.sort(np.concatenate([-np.ones(16), np.zeros(16)]))
        assert np.abs(eig - expected).max() <= 1e-6  # u0 = 1 for the constant profile

    def test_full_report_small_residuals(self, asym_28):
        sol, ops = build_at(asym_28, 0.1, 0.3)
        rep = stability.verify_identities(ops, sol)
        assert rep.fminus_residual <= 1e-8
        assert rep.spectrum_t_residual <= 1e-9
        assert rep.norm_formula_gap <= 1e-8
        assert rep.factorization_residual <= 1e-10

    def test_fminus_approximation_decays_linearly(self, asym_28):
        gaps = []
        for eta in (0.1, 0.05, 0.025):
            sol, ops = build_at(asym_28, eta, 0.5)
            gaps.append(stability.verify_identities(ops, sol).fminus_vs_a)
        gaps = np.array(gaps)
        assert np.all(np.diff(gaps) < 0)          # decreasing with eta
        ratios = gaps[:-1] / gaps[1:]
        assert np.all(ratios >= 1.0) and np.all(ratios <= 4.0)  # ~2x per halving, factor-2 slack
        # the fitted constant C in ||f_- - a|| <= C eta stays bounded
        assert (gaps / np.array([0.1, 0.05, 0.025])).max() <= 10.0


class TestGapProbe:
    def test_constant_profile_gap_is_one(self, constant_16):
        _, ops = build_at(constant_16, 1.0, 0.0)
        assert abs(stability.gap_probe(ops) - 1.0) <= 1e-10

    def test_two_block_gap(self, two_block_20):
        _, ops = build_at(two_block_20, 0.01, 0.5)
        assert stability.gap_probe(ops) >= 0.05

    def test_tau_zero_spectrum_symmetric(self, asym_28):
        _, ops = build_at(asym_28, 0.3, 0.0)
        w = np.sort(np.linalg.eigvalsh(ops.F))
        assert np.abs(w + w[::-1]).max() <= 1e-12  # block antisymmetry


class TestStabilityBounds:
    def test_one_minus_tf_inverse_eta_bound(self, asym_28):
        # sigma_min(1 - TF) >= c eta uniformly on an eta-grid
        ratios = []
        for eta in np.geomspace(1e-4, 1.0, 7):
            _, ops = build_at(asym_28, eta, 0.5)
            ratios.append(stability.one_minus_tf_smallest_singular(ops) / eta)
        assert min(ratios) >= 0.05

    def test_restricted_inverse_uniformly_bounded(self, asym_28):
        norms = []
        for eta in np.geomspace(1e-4, 1.0, 7):
            _, ops = build_at(asym_28, eta, 0.5)
            norms.append(stability.restricted_inverse_norm(ops))
        # bounded independently of eta, unlike the full inverse ~ 1/eta
        assert max(norms) <= 25.0

    def test_spectrum_t_strictly_below_one(self, asym_28):
        for eta in (1e-3, 0.1, 1.0):
            _, ops = build_at(asym_28, eta, 0.5)
            assert np.linalg.eigvalsh(ops.T).max() <= 1.0 - 0.01


class TestDiagnostics:
    def test_report_json_serializable(self, two_block_20):
        sols = [dyson.solve(two_block_20, eta, tau) for eta, tau in [(0.1, 0.3), (0.5, 1.5)]]
        report = stability.diagnostic_report(two_block_20, sols)
        text = json.dumps(report, sort_keys=True)
        parsed = json.loads(text)
        key = "eta=0.1,tau=0.3"
        assert key in parsed
        assert {"adjoint_residual", "norm_F", "gap", "spectrum_T"} <= set(parsed[key])
        assert len(parsed[key]["spectrum_T"]) == 2 * two_block_20.n

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from circlaw import dyson, linalg
from conftest import seeded_flat_profile
from oracles import bisect, two_block_limit

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class TestProfiles:
    def test_flatness_rejects_nonpositive(self):
        s = np.full((4, 4), 0.25)
        s[1, 2] = 0.0
        with pytest.raises(dyson.ProfileParseError):
            dyson.variance_profile(s)

    def test_rejects_non_square(self):
        with pytest.raises(dyson.ProfileParseError):
            dyson.variance_profile(np.ones((3, 4)))

    def test_bounds_recorded(self):
        p = dyson.two_block_profile(10, 1.0, 4.0, 0.3)
        assert np.isclose(p.s_star, 1.0)
        assert np.isclose(p.s_star_upper, 4.0)

    def test_normalize_scales_by_rho(self):
        n = 8
        p = dyson.variance_profile(np.full((n, n), 4.0 / n))  # rho = 4
        assert np.isclose(p.rho, 4.0, atol=1e-10)
        q = dyson.normalize(p)
        assert np.allclose(q.s, 1.0 / n)
        assert np.isclose(q.scale, 4.0)
        assert q.normalized

    def test_normalize_idempotent(self):
        p = dyson.constant_profile(6)
        assert dyson.normalize(p) is p

    def test_normalized_radius_via_power_iteration(self):
        q = dyson.normalize(dyson.two_block_profile(12, 1.0, 4.0, 0.3))
        radius, _ = linalg.power_iteration_radius(q.s)
        assert abs(radius - 1.0) <= 1e-10

    def test_csv_roundtrip(self, tmp_path):
        p = dyson.two_block_profile(5, 1.0, 2.0, 0.4)
        path = tmp_path / "s.csv"
        np.savetxt(path, p.s, delimiter=",")
        q = dyson.load_profile_csv(path)
        assert np.allclose(q.s, p.s)

    def test_csv_malformed(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(dyson.ProfileParseError):
            dyson.load_profile_csv(path)

    def test_generator_spec(self):
        assert dyson.profile_from_spec("constant", 5).n == 5
        assert dyson.profile_from_spec("twoblock", 6, a=1.0, b=2.0, split=0.5).n == 6
        assert dyson.profile_from_spec("smooth", 7, kind="cosine").n == 7
        with pytest.raises(dyson.ProfileParseError):
            dyson.profile_from_spec("fancy", 5)


class TestSolve:
    def test_constant_golden_ratio(self, constant_16):
        sol = dyson.solve(constant_16, 1.0, 0.0)
        assert np.abs(sol.v - GOLDEN).max() <= 1e-10
        assert sol.residual <= 1e-12

    def test_constant_small_eta_inside(self, constant_16):
        sol = dyson.solve(constant_16, 1e-9, 0.5)
        assert np.abs(sol.v - np.sqrt(0.5)).max() <= 1e-8

    def test_constant_outside_vs_bisection_oracle(self, constant_16):
        eta, tau = 1e-4, 2.0
        scalar = bisect(lambda v: eta * v + v * v + tau * v / (eta + v) - 1.0, 1e-12, 1.0)
        sol = dyson.solve(constant_16, eta, tau)
        assert np.abs(sol.v - scalar).max() <= 1e-12
        assert abs(scalar - eta / (tau - 1.0)) <= 2e-8  # leading-order sanity

    def test_requires_positive_eta(self, constant_16):
        with pytest.raises(ValueError):
            dyson.solve(constant_16, 0.0, 0.1)

    def test_requires_normalized_profile(self):
        p = dyson.variance_profile(np.full((4, 4), 0.5))
        with pytest.raises(ValueError):
            dyson.solve(p, 1.0, 0.0)

    def test_uniqueness_from_random_starts(self, flat_profile_24):
        opts = dyson.SolverOptions()
        base = dyson.solve(flat_profile_24, 0.2, 0.6, opts)
        rng = np.random.default_rng(42)
        for _ in range(5):
            v0 = rng.uniform(0.05, 3.0, size=2 * flat_profile_24.n)
            other = dyson.solve(flat_profile_24, 0.2, 0.6, opts, v0=v0)
            assert np.abs(other.v - base.v).max() <= 100 * opts.tol


class TestSolveLimit:
    def test_constant_tau_zero(self, constant_16):
        sol = dyson.solve_limit(constant_16, 0.0)
        assert np.abs(sol.v - 1.0).max() <= 1e-11

    def test_constant_inside(self, constant_16):
        sol = dyson.solve_limit(constant_16, 0.75)
        assert np.abs(sol.v - 0.5).max() <= 1e-11

    def test_two_block_matches_reduced_newton(self, two_block_20):
        p = two_block_20
        m = int(round(p.n * 0.3))
        a_val = p.s[0, 0] * p.n
        b_val = p.s[0, -1] * p.n
        x, y = two_block_limit(a_val, b_val, m / p.n, 0.4)
        sol = dyson.solve_limit(p, 0.4)
        assert np.abs(sol.v1[:m] - x).max() <= 1e-10
        assert np.abs(sol.v1[m:] - y).max() <= 1e-10
        assert np.abs(sol.v2 - sol.v1).max() <= 1e-10  # symmetric profile

    def test_edge_window_rejected(self, constant_16):
        with pytest.raises(dyson.EdgeTooCloseError):
            dyson.solve_limit(constant_16, 0.97)


class TestDerivatives:
    def test_constant_limit_tau_zero(self, constant_16):
        sol = dyson.solve_limit(constant_16, 0.0)
        dv = dyson.derivative_tau(constant_16, sol)
        assert np.abs(dv + 0.5).max() <= 1e-9

    def test_constant_limit_tau_half(self, constant_16):
        sol = dyson.solve_limit(constant_16, 0.5)
        dv = dyson.derivative_tau(constant_16, sol)
        assert np.abs(dv + 1.0 / (2.0 * np.sqrt(0.5))).max() <= 1e-9

    def test_tau_matches_finite_difference(self, flat_profile_24):
        p = flat_profile_24
        sol = dyson.solve(p, 0.1, 0.3)
        dv = dyson.derivative_tau(p, sol)
        h = 1e-5
        fd = (dyson.solve(p, 0.1, 0.3 + h).v - dyson.solve(p, 0.1, 0.3 - h).v) / (2 * h)
        assert np.abs(dv - fd).max() <= 1e-6

    def test_eta_scalar_implicit_differentiation(self, constant_16):
        sol = dyson.solve(constant_16, 1.0, 0.0)
        de = dyson.derivative_eta(constant_16, sol)
        v = GOLDEN
        expected = -v * v / (1.0 + v * v)
        assert np.abs(de - expected).max() <= 1e-10

    def test_eta_large_eta_trend(self, constant_16):
        sol = dyson.solve(constant_16, 100.0, 0.0)
        de = dyson.derivative_eta(constant_16, sol)
        assert np.abs(de + 1e-4).max() <= 0.05 * 1e-4

    def test_eta_matches_finite_difference(self, flat_profile_24):
        p = flat_profile_24
        sol = dyson.solve(p, 0.1, 0.3)
        de = dyson.derivative_eta(p, sol)
        h = 1e-5
        fd = (dyson.solve(p, 0.1 + h, 0.3).v - dyson.solve(p, 0.1 - h, 0.3).v) / (2 * h)
        assert np.abs(de - fd).max() <= 1e-6

    def test_second_tau_matches_finite_difference(self, flat_profile_24):
        p = flat_profile_24
        sol = dyson.solve(p, 0.2, 0.3)
        d2 = dyson.derivative_tau_second(p, sol)
        h = 2e-4
        fd = (dyson.solve(p, 0.2, 0.3 + h).v - 2 * sol.v + dyson.solve(p, 0.2, 0.3 - h).v) / h ** 2
        assert np.abs(d2 - fd).max() <= 1e-4 * max(1.0, np.abs(d2).max())


class TestRegimeCheck:
    def test_large_eta(self, flat_profile_24):
        rep = dyson.regime_check(dyson.solve(flat_profile_24, 10.0, 0.5))
        assert rep.regime == "large-eta"
        assert rep.in_band

    def test_inside(self, flat_profile_24):
        rep = dyson.regime_check(dyson.solve(flat_profile_24, 1e-6, 0.5))
        assert rep.regime == "inside"
        assert rep.in_band

    def test_outside(self, flat_profile_24):
        rep = dyson.regime_check(dyson.solve(flat_profile_24, 1e-6, 2.0))
        assert rep.regime == "outside"
        assert rep.in_band

    def test_out_of_band_flagged_not_raised(self, flat_profile_24):
        rep = dyson.regime_check(dyson.solve(flat_profile_24, 10.0, 0.5), band=(0.99, 1.01))
        assert not rep.in_band
        assert rep.out_of_band_count > 0


class TestInvariants:
    POINTS = [(1.0, 0.0), (0.1, 0.5), (0.01, 0.9), (0.5, 2.0), (5.0, 1.0)]

    @pytest.mark.parametrize("eta,tau", POINTS)
    def test_halves_average_equal(self, flat_profile_24, eta, tau):
        sol = dyson.solve(flat_profile_24, eta, tau)
        assert abs(sol.v1.mean() - sol.v2.mean()) <= 1e-11

    @pytest.mark.parametrize("eta,tau", POINTS)
    def test_u_consistency(self, flat_profile_24, eta, tau):
        p = flat_profile_24
        sol = dyson.solve(p, eta, tau)
        ua = sol.v1 / (eta + p.s.T @ sol.v1)
        ub = sol.v2 / (eta + p.s @ sol.v2)
        assert np.abs(ua - ub).max() <= 1e-11
        assert np.abs(sol.u - sol.v1 * sol.v2 - tau * sol.u ** 2).max() <= 1e-11

    def test_flatness_sandwich(self, flat_profile_24):
        p = flat_profile_24
        sol = dyson.solve(p, 0.3, 0.4)
        lower = p.s_star * sol.v1.mean()
        upper = p.s_star_upper * sol.v1.mean()
        stv1 = p.s.T @ sol.v1
        assert np.all(stv1 >= lower - 1e-12) and np.all(stv1 <= upper + 1e-12)

    @pytest.mark.parametrize("eta,tau", POINTS)
    def test_u_band(self, flat_profile_24, eta, tau):
        sol = dyson.solve(flat_profile_24, eta, tau)
        scaled = sol.u * (1.0 + eta ** 2)
        assert np.all(scaled >= 0.02) and np.all(scaled <= 50.0)

    @pytest.mark.parametrize("eta,tau", POINTS)
    def test_perron_identity(self, flat_profile_24, eta, tau):
        p = flat_profile_24
        _, perron = linalg.power_iteration_radius(p.s)
        sol = dyson.solve(p, eta, tau)
        lhs = float(np.mean(perron * sol.v1 * (eta + p.s.T @ sol.v1) * (eta + p.s @ sol.v2)))
        lhs += tau * float(np.mean(perron * sol.v1))
        rhs = eta + float(np.mean(perron * sol.v1))
        assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(rhs))

    def test_scaling_covariance(self):
        rng = np.random.default_rng(5)
        n = 12
        raw = (1.0 + 0.4 * (2.0 * rng.random((n, n)) - 1.0)) / n * 2.7
        scaled_profile = dyson.variance_profile(raw)
        lam = scaled_profile.rho
        eta, tau = 0.7, 0.4

        mapped = dyson.scaled_solution(scaled_profile, eta, tau)

        # oracle: damped fixed-point directly on the lambda-scaled equations
        v1 = np.full(n, 1.0 / (1.0 + eta))
        v2 = v1.copy()
        for _ in range(20_000):
            q1 = eta + raw @ v2
            q2 = eta + raw.T @ v1
            n1 = 1.0 / (q1 + tau / q2)
            n2 = 1.0 / (q2 + tau / q1)
            if max(np.abs(n1 - v1).max(), np.abs(n2 - v2).max()) < 1e-15:
                v1, v2 = n1, n2
                break
            v1 = 0.5 * v1 + 0.5 * n1
            v2 = 0.5 * v2 + 0.5 * n2

        assert np.abs(mapped.v1 - v1).max() <= 1e-10
        assert np.abs(mapped.v2 - v2).max() <= 1e-10
        assert lam > 1.5  # the test exercised a genuinely scaled profile

    @given(st.integers(2, 10), st.integers(0, 1000),
           st.floats(0.05, 5.0), st.floats(0.0, 3.0))
    def test_positivity_and_symmetry_property(self, n, seed, eta, tau):
        p = seeded_flat_profile(n, seed=seed)
        sol = dyson.solve(p, eta, tau)
        assert np.all(sol.v1 > 0) and np.all(sol.v2 > 0)
        assert abs(sol.v1.mean() - sol.v2.mean()) <= 1e-11
        assert sol.residual <= 1e-12

"""Hermitization pipeline: log-determinant identities and the master formula.

Linear eigenvalue statistics of the non-Hermitian sample X are expressed
through log-determinants of the Hermitian family H^z over a planar grid:

    (1/n) sum f(sigma_i) = (1/2 pi n) Int Lap f(z) log|det(X - z)| d^2 z

with log|det(X - z)| = (1/2) log|det H^z| and the log-determinant split at
a large imaginary shift i T through the Stieltjes transform.  The module
audits the resulting three-term decomposition of the difference between
the empirical linear statistic and its deterministic prediction, and the
direct eigenvalue-histogram comparison against the radial density.

The test function is a fixed C^2 radial bump f(z) = (1 - |z|^2)^3 inside
the unit disk, shifted and rescaled as n^{2a} f(n^a (z - z0)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import density, dyson, ensemble, linalg
from .dyson import VarianceProfile
from .ensemble import EnsembleConfig

BASE_BUMP_LAPLACIAN_L1 = 32.0 * math.pi / 9.0   # Int |Lap (1-|z|^2)^3| d^2 z


class GridTooCoarseError(Exception):
    """The planar quadrature residual exceeds its error model."""


@dataclass(frozen=True)
class TestFunction:
    """Rescaled radial bump n^{2a} f(n^a (z - z0)), f(w) = (1 - |w|^2)^3."""

    center: complex = 0.0
    scale_exponent: float = 0.0   # a in [0, 1/2)
    n: int = 1
    phi: float = 1.0              # support radius of the base bump

    def __post_init__(self):
        if not 0.0 <= self.scale_exponent < 0.5:
            raise ValueError("scale exponent must lie in [0, 1/2)")

    @property
    def support_radius(self) -> float:
        return self.phi * self.n ** -self.scale_exponent

    def value(self, z) -> np.ndarray:
        w2 = np.abs(self.n ** self.scale_exponent * (np.asarray(z) - self.center)) ** 2
        out = self.n ** (2 * self.scale_exponent) * np.where(w2 < 1.0, (1.0 - w2) ** 3, 0.0)
        return out

    def laplacian(self, z) -> np.ndarray:
        """Closed form: Lap f = 12 (1 - |w|^2)(3 |w|^2 - 1) inside the support."""
        w2 = np.abs(self.n ** self.scale_exponent * (np.asarray(z) - self.center)) ** 2
        base = np.where(w2 < 1.0, 12.0 * (1.0 - w2) * (3.0 * w2 - 1.0), 0.0)
        return self.n ** (4 * self.scale_exponent) * base

    @property
    def laplacian_l1(self) -> float:
        """||Lap f_{z0,a}||_{L^1} = n^{2a} * 32 pi / 9, exactly."""
        return self.n ** (2 * self.scale_exponent) * BASE_BUMP_LAPLACIAN_L1


@dataclass(frozen=True)
class GirkoGrid:
    xs: np.ndarray
    ys: np.ndarray
    h: float

    @property
    def nodes(self) -> np.ndarray:
        return self.xs[:, None] + 1j * self.ys[None, :]


def make_grid(tf: TestFunction, h: float | None = None, nodes_across: int = 24,
              margin: int = 2, offset: complex = 0.0) -> GirkoGrid:
    """Square grid covering the support with the prescribed margin.

    The bump must be resolved by at least ``nodes_across`` nodes across its
    diameter; too coarse a request is rejected.
    """
    radius = tf.support_radius
    if h is None:
        h = 2.0 * radius / nodes_across
    if 2.0 * radius / h < nodes_across - 1e-9:
        raise GridTooCoarseError(
            f"h={h:g} resolves only {2 * radius / h:.1f} nodes across the support (need {nodes_across})"
        )
    half = radius + margin * h
    k = int(math.ceil(2.0 * half / h)) + 1
    center = tf.center + offset
    xs = center.real + (np.arange(k) - (k - 1) / 2.0) * h
    ys = center.imag + (np.arange(k) - (k - 1) / 2.0) * h
    return GirkoGrid(xs=xs, ys=ys, h=h)


def _separated_grid(tf, eigs, h, nodes_across, margin, min_dist_factor=0.2, attempts=6):
    """Grid whose nodes keep a safe distance from every eigenvalue."""
    offset = 0.0
    for _ in range(attempts):
        grid = make_grid(tf, h, nodes_across, margin, offset=offset)
        nodes = grid.nodes.ravel()
        dmin = np.abs(nodes[None, :] - np.asarray(eigs)[:, None]).min() if len(eigs) else np.inf
        if dmin >= min_dist_factor * grid.h:
            return grid
        offset += grid.h * (0.31 + 0.13j)
    return grid


@dataclass(frozen=True)
class GirkoIdentityResult:
    lhs: float
    rhs: float
    residual: float
    h: float
    error_model: float


def girko_identity(x, tf: TestFunction, h: float = 0.01, nodes_across: int = 24,
                   margin: int = 2, model_constant: float = 1.0) -> GirkoIdentityResult:
    """Both sides of the log-transform identity on a planar grid.

    The left side averages f over the eigenvalues of x; the right side
    applies the analytic Laplacian of the bump to log|det(X - z)| computed
    by LU per node.  The quadrature is second order; the error model pays
    an extra |log h| for the integrable log singularities at the
    eigenvalues.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    eigs = linalg.general_eigenvalues(x)
    lhs = float(np.mean(tf.value(eigs).real))

    grid = _separated_grid(tf, eigs, h, nodes_across, margin)
    nodes = grid.nodes.ravel()
    lap = tf.laplacian(nodes)
    mask = lap != 0.0
    stack = x[None, :, :] - nodes[mask, None, None] * np.eye(n)[None, :, :]
    logdets = linalg.log_abs_det_stack(stack)
    rhs = grid.h ** 2 / (2.0 * math.pi * n) * float(np.sum(lap[mask] * logdets))

    residual = abs(lhs - rhs)
    error_model = model_constant * tf.laplacian_l1 * grid.h ** 2 * (1.0 + abs(math.log(grid.h)))
    if residual > error_model:
        raise GridTooCoarseError(
            f"girko identity residual {residual:.3e} exceeds error model {error_model:.3e} at h={grid.h:g}"
        )
    return GirkoIdentityResult(lhs=lhs, rhs=rhs, residual=residual, h=grid.h, error_model=error_model)


@dataclass(frozen=True)
class HermitizedLogdetResult:
    lhs: float                 # log|det H^z| by direct LU
    rhs: float                 # log|det(H^z - iT)| - 2n Int_0^T Im m
    difference: float
    logdet_x: float            # log|det(X - z)| by direct LU
    half_identity_gap: float   # |logdet_x - lhs / 2|


def hermitized_logdet(x, z: complex, t_cut: float) -> HermitizedLogdetResult:
    """Split the hermitized log-determinant at the shift iT, both sides independent.

    The eta-integral of Im m^z over [0, T] is evaluated in closed form from
    the spectrum, so the comparison isolates the LU-based determinants.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    h = ensemble.hermitize(x, z)
    lams = np.linalg.eigvalsh(h)
    norm_h = float(np.abs(lams).max())
    if t_cut < 10.0 * norm_h:
        raise ValueError(f"t_cut={t_cut:g} is below 10 ||H^z|| = {10 * norm_h:g}")
    if np.abs(lams).min() == 0.0:
        raise linalg.ExactSingularError("H^z has an eigenvalue at zero")

    lhs = linalg.log_abs_det(linalg.lu_factor(h))
    shifted = linalg.log_abs_det(linalg.lu_factor(h - 1j * t_cut * np.eye(2 * n)))
    # 2n Int_0^T Im m^z(i eta) d eta = sum_i log((lambda_i^2 + T^2) / lambda_i^2) / 2
    stieltjes = 0.5 * float(np.sum(np.log1p(t_cut ** 2 / lams ** 2)))
    rhs = shifted - stieltjes

    logdet_x = linalg.log_abs_det(linalg.lu_factor(x - z * np.eye(n)))
    return HermitizedLogdetResult(
        lhs=lhs, rhs=rhs, difference=lhs - rhs,
        logdet_x=logdet_x, half_identity_gap=abs(logdet_x - 0.5 * lhs),
    )


# ---------------------------------------------------------------------------
# Master-formula audit


def _bulk_tau_grid(tau_max: float) -> np.ndarray:
    """Tau grid refined toward the edge, where the solution scales like sqrt(1-tau)."""
    flat = np.linspace(0.0, min(tau_max, 0.92), 45)
    if tau_max <= 0.92:
        return flat
    s = np.linspace(np.sqrt(1.0 - 0.92), np.sqrt(1.0 - min(tau_max, 0.9996)), 16)
    return np.unique(np.concatenate([flat, 1.0 - s ** 2]))


@dataclass(frozen=True)
class DeterministicTables:
    """Per-profile caches entering every trial of the master-formula audit."""

    taus: np.ndarray
    psi_head: np.ndarray     # Int_0^{eta_cut} <v1>
    psi_mid: np.ndarray      # Int_{eta_cut}^{1} <v1>
    psi_high: np.ndarray     # Int_1^T <v1>
    sigma_vals: np.ndarray
    tail3: np.ndarray        # Int_T^inf (<v1> - 1/(1+eta))
    eta_cut: float
    t_cut: float

    def interp(self, arr: np.ndarray, tau) -> np.ndarray:
        return np.interp(tau, self.taus, arr)


def deterministic_tables(profile: VarianceProfile, tau_max: float, eta_cut: float,
                         t_cut: float, eta_points: int = 120,
                         opts: dyson.SolverOptions = dyson.DEFAULT_OPTIONS) -> DeterministicTables:
    """Tabulate the eta-integrals of <v1> and the density on a bulk tau grid."""
    taus = _bulk_tau_grid(tau_max)
    eta_big = 1e3
    etas = np.unique(np.concatenate([
        np.geomspace(eta_cut, eta_big, eta_points), [1.0],
    ]))
    w = np.log(etas)
    mid_mask = etas <= 1.0

    psi_head = np.empty(taus.shape)
    psi_mid = np.empty(taus.shape)
    psi_high = np.empty(taus.shape)
    sigma_vals = np.empty(taus.shape)
    tail3 = np.empty(taus.shape)

    prev_sweep: list | None = None
    for k, tau in enumerate(taus):
        sols = []
        v0_guess = None
        for j in range(len(etas) - 1, -1, -1):
            guess = prev_sweep[j].v if prev_sweep is not None else v0_guess
            sol = dyson._solve_at(profile, float(etas[j]), float(tau), opts, v0=guess)
            v0_guess = sol.v
            sols.append(sol)
        sols.reverse()
        prev_sweep = sols

        means = np.array([float(np.mean(s.v)) for s in sols])
        if tau <= 0.9996:
            v_at_zero = float(np.mean(dyson._solve_at(profile, 0.0, float(tau), opts, v0=sols[0].v).v))
        else:  # vanishing limit right at the edge
            v_at_zero = 0.0
        psi_head[k] = 0.5 * (v_at_zero + means[0]) * eta_cut
        psi_mid[k] = np.trapezoid((means * etas)[mid_mask], w[mid_mask])
        high_mask = etas >= 1.0
        psi_high[k] = np.trapezoid((means * etas)[high_mask], w[high_mask])
        # analytic continuation of the high piece from eta_big to T, using the
        # measured 1/eta^2 defect of <v1> against 1/(1+eta) at the last node
        delta_big = means[-1] - 1.0 / (1.0 + eta_big)
        psi_high[k] += math.log((1.0 + t_cut) / (1.0 + eta_big)) + delta_big * eta_big * (1.0 - eta_big / t_cut)
        tail3[k] = math.log1p(1.0 / t_cut)   # residual corrections are O(T^-2)

        if tau <= 1.0 - 0.05:
            sigma_vals[k] = density.sigma_derivative_form(profile, float(tau), tau_star=0.05, opts=opts)
        elif tau <= 0.9996:
            sigma_vals[k] = density.sigma_derivative_form(profile, float(tau), tau_star=1.0 - tau - 1e-9, opts=opts)
        else:
            sigma_vals[k] = density.jump_height(profile)

    return DeterministicTables(taus=taus, psi_head=psi_head, psi_mid=psi_mid,
                               psi_high=psi_high, sigma_vals=sigma_vals, tail3=tail3,
                               eta_cut=eta_cut, t_cut=t_cut)


@dataclass(frozen=True)
class MasterTrial:
    trial: int
    term1: float
    term2: float
    term3: float
    lhs_discrepancy: float   # empirical statistic minus Int f sigma
    identity_gap: float      # |lhs - (term1 + term2 + term3)|
    split_gap: float         # eta-split bookkeeping reconstruction defect

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3

    def to_dict(self) -> dict:
        return {
            "trial": self.trial, "term1": self.term1, "term2": self.term2,
            "term3": self.term3, "total": self.total,
            "lhs_discrepancy": self.lhs_discrepancy,
            "identity_gap": self.identity_gap, "split_gap": self.split_gap,
        }


@dataclass(frozen=True)
class MasterReport:
    n: int
    scale_exponent: float
    center: complex
    t_cut: float
    eta_cut: float
    h: float
    target: float            # n^{-1+2a} ||Lap f||_1
    trials: list[MasterTrial] = field(default_factory=list)

    @property
    def constants(self) -> np.ndarray:
        """|lhs discrepancy| / target per trial."""
        return np.array([abs(t.lhs_discrepancy) for t in self.trials]) / self.target

    @property
    def term3_cap(self) -> float:
        """Bound ||Lap f||_1 n^{2a} / T on the tail term."""
        return BASE_BUMP_LAPLACIAN_L1 * self.n ** (2 * self.scale_exponent) / self.t_cut

    def to_dict(self) -> dict:
        return {
            "n": self.n, "a": self.scale_exponent,
            "z0": [self.center.real, self.center.imag],
            "t_cut": self.t_cut, "eta_cut": self.eta_cut, "h": self.h,
            "target": self.target, "term3_cap": self.term3_cap,
            "trials": [t.to_dict() for t in self.trials],
        }


def master_formula_audit(config: EnsembleConfig, tf: TestFunction,
                         t_cut: float | None = None, eps_cut: float = 0.25,
                         nodes_across: int = 24, margin: int = 2,
                         tables: DeterministicTables | None = None,
                         trials: int | None = None) -> MasterReport:
    """Audit the three-term decomposition of the linear-statistics error.

    Term 1 is the large-shift log-determinant integral, term 2 the
    eta-integral of the Stieltjes-transform error (split at eta_cut =
    n^{-1+eps}), term 3 the deterministic tail beyond T.  Every term is
    averaged against the analytic Laplacian of the bump on the planar grid,
    and each trial also records the direct discrepancy between the
    empirical statistic and Int f sigma, which the three terms must
    reconstruct up to quadrature error.
    """
    n = config.n
    if tf.n != n:
        raise ValueError("test function was built for a different dimension")
    t_cut = float(n) ** 4 if t_cut is None else t_cut
    eta_cut = float(n) ** (-1.0 + eps_cut)
    trials = config.trials if trials is None else trials

    grid = make_grid(tf, None, nodes_across, margin)
    nodes = grid.nodes.ravel()
    lap = tf.laplacian(nodes)
    mask = lap != 0.0
    nodes_in = nodes[mask]
    lap_in = lap[mask]
    tau_nodes = np.abs(nodes_in) ** 2
    weight = grid.h ** 2 * lap_in

    if tables is None:
        tables = deterministic_tables(config.profile, float(tau_nodes.max()), eta_cut, t_cut)
    psi_total = (tables.interp(tables.psi_head, tau_nodes)
                 + tables.interp(tables.psi_mid, tau_nodes)
                 + tables.interp(tables.psi_high, tau_nodes))
    sigma_nodes = np.where(tau_nodes < 1.0, tables.interp(tables.sigma_vals, tau_nodes), 0.0)
    f_nodes = tf.value(nodes_in)
    int_f_sigma = grid.h ** 2 * float(np.sum(f_nodes * sigma_nodes))
    term3 = float(np.sum(weight * tables.interp(tables.tail3, tau_nodes))) / (2.0 * math.pi)

    out = []
    for t in range(trials):
        samp = ensemble.sample(config, t)
        x = samp.x
        eigs_x = linalg.general_eigenvalues(x)
        empirical = float(np.mean(tf.value(eigs_x).real))

        logdet_t = np.empty(nodes_in.shape)
        im_m_subcut = np.empty(nodes_in.shape)
        im_m_mid = np.empty(nodes_in.shape)
        im_m_high = np.empty(nodes_in.shape)
        im_m_unsplit = np.empty(nodes_in.shape)
        chunk = max(1, int(4e6 // (n * n)))
        eye = np.eye(n)
        for lo in range(0, len(nodes_in), chunk):
            zs = nodes_in[lo:lo + chunk]
            stack = x[None, :, :] - zs[:, None, None] * eye[None, :, :]
            svals = np.linalg.svd(stack, compute_uv=False)
            s2 = svals ** 2
            # centered: log|det(H - iT)| - 2n log T; the constant integrates
            # against Lap f to zero exactly and would otherwise leak the
            # O(h^2) defect of the discrete Int Lap f into the term
            logdet_t[lo:lo + chunk] = np.sum(np.log1p(s2 / t_cut ** 2), axis=1)
            im_m_subcut[lo:lo + chunk] = np.sum(np.log1p(eta_cut ** 2 / s2), axis=1) / (2.0 * n)
            im_m_mid[lo:lo + chunk] = np.sum(np.log((s2 + 1.0) / (s2 + eta_cut ** 2)), axis=1) / (2.0 * n)
            im_m_high[lo:lo + chunk] = np.sum(np.log((s2 + t_cut ** 2) / (s2 + 1.0)), axis=1) / (2.0 * n)
            im_m_unsplit[lo:lo + chunk] = np.sum(np.log1p(t_cut ** 2 / s2), axis=1) / (2.0 * n)

        term1 = float(np.sum(weight * logdet_t)) / (4.0 * math.pi * n)
        im_m_total = im_m_subcut + im_m_mid + im_m_high
        # eta-split bookkeeping: the three pieces must rebuild the closed-form
        # unsplit integral Int_0^T Im m = sum log(1 + T^2/s^2) / 2n per node
        split_gap = float(np.abs(im_m_total - im_m_unsplit).max())
        term2 = -float(np.sum(weight * (im_m_total - psi_total))) / (2.0 * math.pi)

        lhs = empirical - int_f_sigma
        trial_rep = MasterTrial(
            trial=t, term1=term1, term2=term2, term3=term3,
            lhs_discrepancy=lhs,
            identity_gap=abs(lhs - (term1 + term2 + term3)),
            split_gap=split_gap,
        )
        out.append(trial_rep)

    # the rate target is stated against the *base* bump's Laplacian mass
    target = n ** (-1.0 + 2.0 * tf.scale_exponent) * BASE_BUMP_LAPLACIAN_L1
    return MasterReport(n=n, scale_exponent=tf.scale_exponent, center=tf.center,
                        t_cut=t_cut, eta_cut=eta_cut, h=grid.h,
                        target=target, trials=out)


# ---------------------------------------------------------------------------
# Histogram comparison


@dataclass(frozen=True)
class HistReport:
    bin_edges_r: np.ndarray
    bin_centers_r: np.ndarray
    empirical_density: np.ndarray
    sigma: np.ndarray
    stderr: np.ndarray
    outside_fraction: float
    outside_threshold: float
    total_eigenvalues: int

    def bulk_mask(self, tau_cap: float = 0.8) -> np.ndarray:
        return self.bin_edges_r[1:] ** 2 <= tau_cap

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_center_r,empirical_density,sigma,stderr\n")
            for r, d, s, e in zip(self.bin_centers_r, self.empirical_density, self.sigma, self.stderr):
                fh.write(f"{r:.17g},{d:.17g},{s:.17g},{e:.17g}\n")


def histogram_vs_sigma(config: EnsembleConfig, radial_bins: int = 24,
                       r_max: float = 1.25, tau_star: float = 0.2,
                       dp: density.DensityProfile | None = None,
                       trials: int | None = None) -> HistReport:
    """Pooled radial eigenvalue histogram against the deterministic density."""
    trials = config.trials if trials is None else trials
    moduli = []
    for t in range(trials):
        eigs = linalg.general_eigenvalues(sample_x(config, t))
        moduli.append(np.abs(eigs))
    moduli = np.concatenate(moduli)
    total = moduli.size

    edges = np.linspace(0.0, r_max, radial_bins + 1)
    counts, _ = np.histogram(moduli, bins=edges)
    areas = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    dens = counts / (total * areas)
    err = np.sqrt(np.maximum(counts, 1.0)) / (total * areas)

    centers = 0.5 * (edges[:-1] + edges[1:])
    if dp is None:
        dp = density.density_profile(config.profile, np.linspace(0.0, 0.95, 30))
    sig = dp.sigma_at(centers ** 2)

    outside = float(np.mean(moduli ** 2 >= 1.0 + tau_star))
    return HistReport(bin_edges_r=edges, bin_centers_r=centers, empirical_density=dens,
                      sigma=sig, stderr=err, outside_fraction=outside,
                      outside_threshold=1.0 + tau_star, total_eigenvalues=total)


def sample_x(config: EnsembleConfig, trial: int) -> np.ndarray:
    return ensemble.sample(config, trial).x

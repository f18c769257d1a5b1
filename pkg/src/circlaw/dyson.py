"""Coupled vector self-consistent equations for the spectral density.

Solves, for a nonnegative variance profile S with spectral radius one, the
pair of equations

    1/v1 = eta + S v2   + tau / (eta + S^t v1)
    1/v2 = eta + S^t v1 + tau / (eta + S v2)

for positive vectors (v1, v2) at any (eta > 0, tau >= 0), including the
eta -> 0 limit away from the spectral edge, plus the linear-response
derivatives in eta and tau used by the density and stability modules.

Notation follows the normalized conventions used throughout the package:
<w> is the arithmetic mean of a vector's entries and the pair average
couples the two halves of the stacked vector (v1, v2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import linalg


class NoConvergenceError(Exception):
    """The solver exhausted its iteration budget."""


class EdgeTooCloseError(Exception):
    """An eta = 0 solution was requested too close to tau = 1."""


class SingularStabilityError(Exception):
    """The linearized system is numerically singular."""


class ProfileParseError(ValueError):
    """A variance-profile file or generator spec could not be parsed."""

    kind = "profile-parse"


# ---------------------------------------------------------------------------
# Variance profiles


@dataclass(frozen=True)
class VarianceProfile:
    """Entrywise-variance matrix S with flatness bounds and scaling state.

    ``rho`` is the spectral radius of the matrix the profile was built from
    (before any normalization); ``scale`` is the factor lambda by which the
    original matrix exceeds the stored one, so solutions of the original
    profile at (eta, tau) are lambda^{-1/2} * v^{tau/lambda}(eta/sqrt(lambda))
    of the stored, normalized one.
    """

    n: int
    s: np.ndarray
    s_star: float          # n * min s_ij  (lower flatness bound)
    s_star_upper: float    # n * max s_ij  (upper flatness bound)
    rho: float
    normalized: bool
    scale: float = 1.0

    def so_apply(self, v: np.ndarray) -> np.ndarray:
        """Off-diagonal coupling: (S v2, S^t v1) for stacked v = (v1, v2)."""
        n = self.n
        return np.concatenate([self.s @ v[n:], self.s.T @ v[:n]])

    def sd_apply(self, v: np.ndarray) -> np.ndarray:
        """Diagonal coupling: (S^t v1, S v2) for stacked v = (v1, v2)."""
        n = self.n
        return np.concatenate([self.s.T @ v[:n], self.s @ v[n:]])

    def so_matrix(self) -> np.ndarray:
        z = np.zeros((self.n, self.n))
        return np.block([[z, self.s], [self.s.T, z]])

    def sd_matrix(self) -> np.ndarray:
        z = np.zeros((self.n, self.n))
        return np.block([[self.s.T, z], [z, self.s]])


def variance_profile(s, scale: float = 1.0, _rho: float | None = None) -> VarianceProfile:
    """Validate a raw matrix of variances and wrap it as a profile.

    Flatness is enforced at load: all entries must be strictly positive and
    finite, so that s_*/n <= s_ij <= s^*/n holds with 0 < s_* <= s^*.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ProfileParseError(f"variance profile must be square, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ProfileParseError("variance profile contains non-finite entries")
    n = s.shape[0]
    lo, hi = float(s.min()), float(s.max())
    if lo <= 0:
        raise ProfileParseError("flatness violated: variance profile must be entrywise positive")
    rho = float(_rho) if _rho is not None else linalg.power_iteration_radius(s)[0]
    return VarianceProfile(
        n=n, s=s, s_star=n * lo, s_star_upper=n * hi,
        rho=rho, normalized=abs(rho - 1.0) <= 1e-10, scale=scale,
    )


def normalize(profile: VarianceProfile) -> VarianceProfile:
    """Rescale so the spectral radius is one, recording the scale factor."""
    if profile.normalized:
        return profile
    lam = profile.rho
    scaled = variance_profile(profile.s / lam, scale=profile.scale * lam, _rho=1.0)
    return replace(scaled, rho=profile.rho, normalized=True)


def constant_profile(n: int) -> VarianceProfile:
    """s_ij = 1/n; spectral radius is exactly one."""
    return variance_profile(np.full((n, n), 1.0 / n), _rho=1.0)


def two_block_profile(n: int, a: float = 1.0, b: float = 4.0, split: float = 0.3) -> VarianceProfile:
    """Symmetric two-block profile: variances a/n and b/n in a 2x2 block pattern.

    The default split is deliberately uneven; an even split with this value
    pattern is swap-invariant and collapses to the constant-profile density.
    """
    m = int(round(n * split))
    if not 0 < m < n:
        raise ProfileParseError(f"two-block split {split} leaves an empty block at n={n}")
    if a <= 0 or b <= 0:
        raise ProfileParseError("two-block values must be positive")
    s = np.full((n, n), b / n)
    s[:m, :m] = a / n
    s[m:, m:] = a / n
    return variance_profile(s)


def smooth_profile(n: int, kind: str = "cosine") -> VarianceProfile:
    """Smooth positive profile given by a named function of (i+j)/n or (i-j)/n."""
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    if kind == "cosine":
        s = (1.0 + 0.5 * np.cos(np.pi * (i + j) / n)) / n
    elif kind == "bump":
        s = (0.5 + np.exp(-4.0 * ((i - j) / n) ** 2)) / n
    else:
        raise ProfileParseError(f"unknown smooth profile function id: {kind!r}")
    return variance_profile(s)


def load_profile_csv(path) -> VarianceProfile:
    """Load an n x n CSV of nonnegative reals interpreted as s_ij."""
    rows = []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or all(not cell.strip() for cell in row):
                    continue
                rows.append([float(cell) for cell in row])
    except (OSError, ValueError) as exc:
        raise ProfileParseError(f"cannot parse variance profile CSV: {exc}") from exc
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ProfileParseError("variance profile CSV is not a square matrix")
    return variance_profile(np.array(rows))


def profile_from_spec(name: str, n: int, **params) -> VarianceProfile:
    """Build a profile from a generator id: constant | twoblock | smooth."""
    if name == "constant":
        return constant_profile(n)
    if name in ("twoblock", "two-block"):
        return two_block_profile(n, **params)
    if name == "smooth":
        return smooth_profile(n, **params)
    raise ProfileParseError(f"unknown profile generator: {name!r}")


# ---------------------------------------------------------------------------
# Solver


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the damped fixed-point / Newton solver.

    ``tol`` applies to the scaled defect of the defining equations,
    max_i |1/v_i - rhs_i| v_i/(1+v_i); see _residual_norm.
    """

    tol: float = 1e-12
    max_iter: int = 100_000
    damping: float = 0.5
    fixed_point_budget: int = 2000   # iterations before switching to Newton
    newton_budget: int = 60


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class DysonSolution:
    """Positive solution at one (eta, tau) point with solver diagnostics."""

    eta: float
    tau: float
    v1: np.ndarray
    v2: np.ndarray
    u: np.ndarray
    iterations: int
    residual: float

    @property
    def n(self) -> int:
        return self.v1.shape[0]

    @property
    def v(self) -> np.ndarray:
        """Stacked (v1, v2)."""
        return np.concatenate([self.v1, self.v2])

    @property
    def v_tilde(self) -> np.ndarray:
        """Pair-swapped stack (v2, v1)."""
        return np.concatenate([self.v2, self.v1])

    @property
    def u2(self) -> np.ndarray:
        """u duplicated on both halves."""
        return np.concatenate([self.u, self.u])


def _residual(profile, eta, tau, v1, v2):
    q1 = eta + profile.s @ v2
    q2 = eta + profile.s.T @ v1
    r1 = 1.0 / v1 - q1 - tau / q2
    r2 = 1.0 / v2 - q2 - tau / q1
    return q1, q2, r1, r2


def _residual_norm(v1, v2, r1, r2):
    # Scaled sup norm |r_i| v_i / (1 + v_i): outside the spectrum at small eta
    # the solution is O(eta) and the raw defect of the equations is floored
    # near 1e-10 by the O(1/v) terms alone, so the tolerance is measured on
    # the relative form (which is what the downstream identities feel).
    s1 = np.abs(r1) * v1 / (1.0 + v1)
    s2 = np.abs(r2) * v2 / (1.0 + v2)
    return max(s1.max(), s2.max())


def _symmetrize(v1, v2):
    # Rescale the halves along the soft pair-swap direction so <v1> = <v2>
    # exactly; the equations force this equality on the true solution.
    m1, m2 = v1.mean(), v2.mean()
    beta = (m2 - m1) / (m1 + m2)
    return v1 * (1.0 + beta), v2 * (1.0 - beta)


def _newton_matrix(profile, eta, tau, v1, v2, q1, q2):
    s, st = profile.s, profile.s.T
    n = profile.n
    p1 = 1.0 / (q1 + tau / q2)   # map output, half 1
    p2 = 1.0 / (q2 + tau / q1)
    j = np.zeros((2 * n, 2 * n))
    j[:n, :n] = np.eye(n) - (tau * p1 ** 2 / q2 ** 2)[:, None] * st
    j[:n, n:] = (p1 ** 2)[:, None] * s
    j[n:, :n] = (p2 ** 2)[:, None] * st
    j[n:, n:] = np.eye(n) - (tau * p2 ** 2 / q1 ** 2)[:, None] * s
    g = np.concatenate([v1 - p1, v2 - p2])
    return j, g


def _bordered_solve(j, g, v1, v2):
    # One-dimensional bordering along the pair-swap direction e_- v; the
    # gauge <e_- x> = 0 makes the system well conditioned down to eta = 0.
    n2 = g.shape[0]
    m = np.zeros((n2 + 1, n2 + 1))
    m[:n2, :n2] = j
    m[: n2 // 2, n2] = v1
    m[n2 // 2: n2, n2] = -v2
    m[n2, : n2 // 2] = 1.0 / n2
    m[n2, n2 // 2: n2] = -1.0 / n2
    rhs = np.concatenate([g, [0.0]])
    try:
        sol = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularStabilityError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularStabilityError("bordered linear solve produced non-finite values")
    return sol[:n2]


def _solve_at(profile, eta, tau, opts, v0=None):
    n = profile.n
    if v0 is None:
        v1 = np.full(n, 1.0 / (1.0 + eta))
        v2 = v1.copy()
    else:
        v1, v2 = v0[:n].copy(), v0[n:].copy()
    omega = opts.damping
    iterations = 0
    res = np.inf
    window = np.inf

    fp_budget = min(opts.fixed_point_budget, opts.max_iter)
    while iterations < fp_budget:
        q1, q2, r1, r2 = _residual(profile, eta, tau, v1, v2)
        res = _residual_norm(v1, v2, r1, r2)
        if res <= opts.tol:
            break
        p1 = 1.0 / (q1 + tau / q2)
        p2 = 1.0 / (q2 + tau / q1)
        v1 = (1.0 - omega) * v1 + omega * p1
        v2 = (1.0 - omega) * v2 + omega * p2
        v1, v2 = _symmetrize(v1, v2)
        iterations += 1
        if iterations % 200 == 0:
            # Stalled contraction (rate 1 - O(eta) near the edge): hand the
            # point to Newton instead of burning the budget.
            if res > 0.25 * window:
                break
            window = res

    newton_steps = 0
    while res > opts.tol and iterations < opts.max_iter and newton_steps < opts.newton_budget:
        q1, q2, r1, r2 = _residual(profile, eta, tau, v1, v2)
        res = _residual_norm(v1, v2, r1, r2)
        if res <= opts.tol:
            break
        j, g = _newton_matrix(profile, eta, tau, v1, v2, q1, q2)
        delta = _bordered_solve(j, g, v1, v2)
        step = 1.0
        accepted = False
        for _ in range(25):
            t1 = v1 - step * delta[:n]
            t2 = v2 - step * delta[n:]
            if np.all(t1 > 0) and np.all(t2 > 0):
                _, _, s1, s2 = _residual(profile, eta, tau, t1, t2)
                if _residual_norm(t1, t2, s1, s2) < res or step < 1e-6:
                    v1, v2 = _symmetrize(t1, t2)
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        iterations += 1
        newton_steps += 1

    q1, q2, r1, r2 = _residual(profile, eta, tau, v1, v2)
    res = _residual_norm(v1, v2, r1, r2)
    if res > opts.tol:
        raise NoConvergenceError(
            f"no convergence at eta={eta:g}, tau={tau:g}: residual {res:.3e} after {iterations} iterations"
        )
    u = 0.5 * (v1 / q2 + v2 / q1)
    return DysonSolution(eta=eta, tau=tau, v1=v1, v2=v2, u=u, iterations=iterations, residual=float(res))


def solve(profile: VarianceProfile, eta: float, tau: float,
          opts: SolverOptions = DEFAULT_OPTIONS, v0: np.ndarray | None = None) -> DysonSolution:
    """Damped fixed-point solution (Newton-polished) at eta > 0, tau >= 0."""
    _require_normalized(profile)
    if eta <= 0:
        raise ValueError("solve requires eta > 0; use solve_limit for eta = 0")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return _solve_at(profile, eta, tau, opts, v0=v0)


def solve_limit(profile: VarianceProfile, tau: float, tau_star: float = 0.05,
                opts: SolverOptions = DEFAULT_OPTIONS) -> DysonSolution:
    """Positive eta = 0 solution for tau <= 1 - tau_star.

    Seeded from the eta = 1e-6 solution; the limit degenerates as tau -> 1
    (the solution vanishes like sqrt(1 - tau)), so points beyond
    1 - tau_star are rejected.
    """
    _require_normalized(profile)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau > 1.0 - tau_star:
        raise EdgeTooCloseError(f"tau={tau:g} is inside the edge window (tau_star={tau_star:g})")
    seed = _solve_at(profile, 1e-6, tau, opts)
    return _solve_at(profile, 0.0, tau, opts, v0=seed.v)


def eta_sweep(profile: VarianceProfile, tau: float, etas,
              opts: SolverOptions = DEFAULT_OPTIONS) -> list[DysonSolution]:
    """Solve along a descending-or-any eta grid with warm starts."""
    _require_normalized(profile)
    order = np.argsort(etas)[::-1]  # warm-start from large eta downward
    out: list[DysonSolution | None] = [None] * len(etas)
    v0 = None
    for k in order:
        sol = _solve_at(profile, float(etas[k]), tau, opts, v0=v0)
        v0 = sol.v
        out[k] = sol
    return out  # type: ignore[return-value]


def _require_normalized(profile: VarianceProfile):
    if not profile.normalized:
        raise ValueError("profile must be normalized (rho(S) = 1); call normalize() first")


def scaled_solution(profile: VarianceProfile, eta: float, tau: float,
                    opts: SolverOptions = DEFAULT_OPTIONS) -> DysonSolution:
    """Solution for an unnormalized profile via the exact scaling map.

    If rho(S) = lambda, the solution of the lambda-scaled equations is
    lambda^{-1/2} v^{tau/lambda}(eta/sqrt(lambda)) of the normalized ones.
    """
    norm = normalize(profile)
    lam = profile.rho if not profile.normalized else 1.0
    inner = solve(norm, eta / np.sqrt(lam), tau / lam, opts)
    fac = lam ** -0.5
    q1 = eta + profile.s @ (fac * inner.v2)
    q2 = eta + profile.s.T @ (fac * inner.v1)
    u = 0.5 * (fac * inner.v1 / q2 + fac * inner.v2 / q1)
    return DysonSolution(eta=eta, tau=tau, v1=fac * inner.v1, v2=fac * inner.v2,
                         u=u, iterations=inner.iterations, residual=inner.residual)


# ---------------------------------------------------------------------------
# Linear response


def _stability_rhs_tau(sol: DysonSolution) -> np.ndarray:
    return -sol.u2 * sol.v


def _stability_rhs_eta(sol: DysonSolution) -> np.ndarray:
    return -sol.v ** 2 + sol.tau * sol.u2 ** 2


def _solve_l_system(profile: VarianceProfile, sol: DysonSolution, rhs: np.ndarray) -> np.ndarray:
    """Solve L x = rhs in the gauge <x_1> = <x_2>.

    The linearization L is exactly singular along the pair-swap direction
    at eta = 0 (and nearly so for small eta), but the true derivative keeps
    the two half-averages equal, so the bordered system is the correct and
    well-conditioned formulation at every eta >= 0.
    """
    from . import stability

    lmat = stability.stability_matrix(profile, sol)
    x = _bordered_solve(lmat, rhs, sol.v1, sol.v2)
    resid = np.abs(lmat @ x - rhs).max()
    scale = max(np.abs(rhs).max(), 1e-300)
    if resid > 1e-7 * max(scale, np.abs(x).max()):
        raise SingularStabilityError(
            f"L-system solve failed: residual {resid:.3e} at eta={sol.eta:g}, tau={sol.tau:g}"
        )
    return x


def derivative_tau(profile: VarianceProfile, sol: DysonSolution) -> np.ndarray:
    """d v / d tau from the exact linear system L (dv) = -u v."""
    return _solve_l_system(profile, sol, _stability_rhs_tau(sol))


def derivative_eta(profile: VarianceProfile, sol: DysonSolution) -> np.ndarray:
    """d v / d eta from the exact linear system L (dv) = -v^2 + tau u^2."""
    return _solve_l_system(profile, sol, _stability_rhs_eta(sol))


def derivative_tau_second(profile: VarianceProfile, sol: DysonSolution,
                          dv: np.ndarray | None = None) -> np.ndarray:
    """d^2 v / d tau^2 via L (d2v) = 2 (dv)^2/v + 2 u^2 Sd dv - 2 tau u^3/v (Sd dv)^2."""
    if dv is None:
        dv = derivative_tau(profile, sol)
    v, u2 = sol.v, sol.u2
    sd_dv = profile.sd_apply(dv)
    rhs = 2.0 * dv ** 2 / v + 2.0 * u2 ** 2 * sd_dv - 2.0 * sol.tau * u2 ** 3 / v * sd_dv ** 2
    return _solve_l_system(profile, sol, rhs)


# ---------------------------------------------------------------------------
# Regime classification


@dataclass(frozen=True)
class RegimeReport:
    eta: float
    tau: float
    regime: str
    scale: float
    ratios: np.ndarray
    band: tuple[float, float]

    @property
    def in_band(self) -> bool:
        lo, hi = self.band
        return bool(np.all((self.ratios >= lo) & (self.ratios <= hi)))

    @property
    def out_of_band_count(self) -> int:
        lo, hi = self.band
        return int(np.sum((self.ratios < lo) | (self.ratios > hi)))


def regime_check(sol: DysonSolution, band: tuple[float, float] = (0.05, 20.0)) -> RegimeReport:
    """Compare the solution against its asymptotic regime scale.

    Large eta (eta >= 1): v ~ 1/eta.  Inside (eta < 1, tau <= 1):
    v ~ eta^{1/3} + sqrt(1 - tau).  Outside (eta < 1, tau > 1):
    v ~ eta / (tau - 1 + eta^{2/3}).
    """
    eta, tau = sol.eta, sol.tau
    if eta >= 1.0:
        regime, scale = "large-eta", 1.0 / eta
    elif tau <= 1.0:
        regime, scale = "inside", eta ** (1.0 / 3.0) + np.sqrt(1.0 - tau)
    else:
        regime, scale = "outside", eta / (tau - 1.0 + eta ** (2.0 / 3.0))
    return RegimeReport(eta=eta, tau=tau, regime=regime, scale=float(scale),
                        ratios=sol.v / scale, band=band)

"""Radial density of states and its integral functionals.

The limiting eigenvalue density sigma of the random matrix is rotationally
symmetric, so the whole module works on the radial variable tau = |z|^2 and
exposes two independent evaluation routes:

  * derivative form   sigma = (1/pi) d/dtau (tau <u0>) = -(2/pi) <So v0, dv0/dtau>
    from the eta = 0 limit of the self-consistent solution, and
  * integral form     sigma = -(1/2pi) Int_0^inf Laplacian_z <v1> deta
    with the Laplacian expressed through first and second tau-derivatives.

Their agreement is one of the package's main cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dyson, linalg
from .dyson import DEFAULT_OPTIONS, SolverOptions, VarianceProfile


def sigma_derivative_form(profile: VarianceProfile, tau: float, tau_star: float = 0.05,
                          opts: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Density at tau = |z|^2 from the eta = 0 solution and its tau-derivative."""
    sol = dyson.solve_limit(profile, tau, tau_star=tau_star, opts=opts)
    dv = dyson.derivative_tau(profile, sol)
    so_v = profile.so_apply(sol.v)
    return float(-(2.0 / math.pi) * np.mean(so_v * dv))


def u_derivative_tau(profile: VarianceProfile, sol: dyson.DysonSolution, dv: np.ndarray) -> np.ndarray:
    """d u / d tau from the chain rule, averaged over its two consistent forms."""
    n = profile.n
    q2 = sol.eta + profile.s.T @ sol.v1
    q1 = sol.eta + profile.s @ sol.v2
    da = (dv[:n] - sol.u * (profile.s.T @ dv[:n])) / q2
    db = (dv[n:] - sol.u * (profile.s @ dv[n:])) / q1
    return 0.5 * (da + db)


def default_eta_grid(eta_min: float = 1e-6, eta_max: float = 1e3, points: int = 120) -> np.ndarray:
    return np.geomspace(eta_min, eta_max, points)


@dataclass(frozen=True)
class IntegralFormResult:
    value: float
    quadrature_error: float   # grid-coarsening estimate plus tail bound
    tail: float               # analytic O(eta^-3) tail beyond the grid

    def __float__(self) -> float:  # pragma: no cover - convenience
        return self.value


def _laplacian_integrand(profile, sol, tau):
    dv = dyson.derivative_tau(profile, sol)
    d2v = dyson.derivative_tau_second(profile, sol, dv)
    return 4.0 * (tau * float(np.mean(d2v)) + float(np.mean(dv)))


def sigma_integral_form(profile: VarianceProfile, tau: float, eta_grid=None,
                        tau_star: float = 0.05,
                        opts: SolverOptions = DEFAULT_OPTIONS) -> IntegralFormResult:
    """Density from the eta-integral of the Laplacian of <v1>.

    The integrand is evaluated on a geometric eta-grid via the exact linear
    systems for the first and second tau-derivatives, integrated by the
    trapezoid rule in log(eta); the head piece [0, eta_min] uses the smooth
    eta = 0 limit and the tail beyond the grid uses the (1 + eta^3)^{-1}
    decay of the integrand.
    """
    if tau > 1.0 - tau_star:
        raise dyson.EdgeTooCloseError(f"tau={tau:g} is inside the edge window (tau_star={tau_star:g})")
    etas = default_eta_grid() if eta_grid is None else np.asarray(eta_grid, dtype=float)
    sols = dyson.eta_sweep(profile, tau, etas, opts=opts)
    integrand = np.array([_laplacian_integrand(profile, s, tau) for s in sols])

    # head: [0, eta_min] with the eta = 0 limit as the left node
    sol0 = dyson.solve_limit(profile, tau, tau_star=tau_star, opts=opts)
    i0 = _laplacian_integrand(profile, sol0, tau)
    head = 0.5 * (i0 + integrand[0]) * etas[0]

    w = np.log(etas)
    body = np.trapezoid(integrand * etas, w)
    body_coarse = np.trapezoid((integrand * etas)[::2], w[::2])

    tail = 0.5 * integrand[-1] * etas[-1]   # Int C/eta^3 beyond the last node
    value = -(head + body + tail) / (2.0 * math.pi)
    err = abs(body - body_coarse) / 3.0 / (2.0 * math.pi) + abs(tail) / (2.0 * math.pi)
    return IntegralFormResult(value=float(value), quadrature_error=float(err), tail=float(tail))


def cumulative_mass(profile: VarianceProfile, tau: float, tau_star: float = 0.05,
                    opts: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Mass inside |z|^2 <= tau, equal to tau <u0> at eta = 0."""
    if tau == 0.0:
        return 0.0
    sol = dyson.solve_limit(profile, tau, tau_star=tau_star, opts=opts)
    return float(tau * np.mean(sol.u))


def jump_height(profile: VarianceProfile) -> float:
    """Edge value of sigma: (1/pi) <s1 s2>^2 / <s1^2 s2^2>.

    s1 and s2 are the Perron vectors of S^t and S, each normalized to
    mean one.
    """
    dyson._require_normalized(profile)
    _, s1 = linalg.power_iteration_radius(profile.s.T)
    _, s2 = linalg.power_iteration_radius(profile.s)
    num = float(np.mean(s1 * s2)) ** 2
    den = float(np.mean(s1 ** 2 * s2 ** 2))
    return num / den / math.pi


def total_mass(profile: VarianceProfile, tau_star: float = 0.02,
               opts: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Cumulative mass at 1 - tau_star plus the jump-height edge correction.

    The corrective term approximates sigma by its edge value on the annulus
    1 - tau_star <= |z|^2 <= 1, whose area is pi * tau_star.
    """
    bulk = cumulative_mass(profile, 1.0 - tau_star, tau_star=tau_star, opts=opts)
    return bulk + jump_height(profile) * math.pi * tau_star


@dataclass(frozen=True)
class DensityProfile:
    tau_grid: np.ndarray
    sigma_vals: np.ndarray
    cumulative: np.ndarray
    jump_height: float
    total_mass: float

    @property
    def c_upper(self) -> float:
        """Largest sigma value observed on the grid."""
        return float(self.sigma_vals.max())

    @property
    def c_lower(self) -> float:
        """Smallest sigma value observed on the grid."""
        return float(self.sigma_vals.min())

    def sigma_at(self, tau) -> np.ndarray:
        """Interpolated sigma(tau), zero for tau >= 1."""
        tau = np.asarray(tau, dtype=float)
        vals = np.interp(tau, self.tau_grid, self.sigma_vals,
                         left=self.sigma_vals[0], right=self.jump_height)
        return np.where(tau >= 1.0, 0.0, vals)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("tau,sigma,cumulative\n")
            for t, s, c in zip(self.tau_grid, self.sigma_vals, self.cumulative):
                fh.write(f"{t:.17g},{s:.17g},{c:.17g}\n")

    def summary(self) -> dict:
        return {
            "jump_height": self.jump_height,
            "total_mass": self.total_mass,
            "c1": self.c_upper,
            "c2": self.c_lower,
        }


def density_profile(profile: VarianceProfile, tau_grid=None, tau_star: float = 0.05,
                    method: str = "derivative", edge_tau_star: float = 0.02,
                    opts: SolverOptions = DEFAULT_OPTIONS) -> DensityProfile:
    """Evaluate sigma and the cumulative mass on an ascending tau grid."""
    if tau_grid is None:
        tau_grid = np.linspace(0.0, 1.0 - tau_star, 20)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if method == "derivative":
        sigma = np.array([sigma_derivative_form(profile, t, tau_star, opts) for t in tau_grid])
    elif method == "integral":
        sigma = np.array([sigma_integral_form(profile, t, None, tau_star, opts).value for t in tau_grid])
    else:
        raise ValueError(f"unknown density method {method!r}")
    cum = np.array([cumulative_mass(profile, t, tau_star, opts) for t in tau_grid])
    return DensityProfile(
        tau_grid=tau_grid, sigma_vals=sigma, cumulative=cum,
        jump_height=jump_height(profile),
        total_mass=total_mass(profile, tau_star=edge_tau_star, opts=opts),
    )


def export_2d(dp: DensityProfile, path, half_width: float = 1.1, resolution: int = 101):
    """Render the radial profile on a 2-D grid: columns re(z), im(z), sigma."""
    xs = np.linspace(-half_width, half_width, resolution)
    with open(path, "w") as fh:
        fh.write("re,im,sigma\n")
        for x in xs:
            taus = x * x + xs * xs
            vals = dp.sigma_at(taus)
            for y, s in zip(xs, vals):
                fh.write(f"{x:.17g},{y:.17g},{s:.17g}\n")

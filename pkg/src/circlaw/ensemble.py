"""Random-matrix sampling and finite-n verification statistics.

Samples matrices with a prescribed entrywise variance profile, builds the
Hermitian double-dimension embedding for a shift z, extracts resolvent
diagonals, and measures the closeness of the sampled resolvent to the
deterministic self-consistent solution (the "local law" error), eigenvalue
counting near zero, smallest singular values, eigenvector delocalization,
and the spectral radius.

Every trial derives its own counter-based random stream from
(base_seed, trial index), so results are reproducible and order-independent
under any parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dyson, linalg
from .dyson import VarianceProfile

ENTRY_LAWS = ("complex-gaussian", "symmetrized-bernoulli", "uniform-disk")


@dataclass(frozen=True)
class EnsembleConfig:
    n: int
    profile: VarianceProfile
    entry_law: str = "complex-gaussian"
    base_seed: int = 0
    trials: int = 1

    def __post_init__(self):
        if self.entry_law not in ENTRY_LAWS:
            raise ValueError(f"unknown entry law {self.entry_law!r}; choose from {ENTRY_LAWS}")
        if self.profile.n != self.n:
            raise ValueError(f"profile dimension {self.profile.n} does not match n={self.n}")


@dataclass(frozen=True)
class EnsembleSample:
    x: np.ndarray
    seed: tuple[int, int]   # (base_seed, trial index)


def trial_rng(base_seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream split: one Philox stream per (seed, trial)."""
    key = (int(base_seed) % (1 << 64)) * (1 << 64) + (int(trial) % (1 << 64))
    return np.random.Generator(np.random.Philox(key=key))


def sample(config: EnsembleConfig, trial: int) -> EnsembleSample:
    """Draw x_ij = sqrt(s_ij) * xi_ij with unit-variance centered xi."""
    rng = trial_rng(config.base_seed, trial)
    n = config.n
    if config.entry_law == "complex-gaussian":
        xi = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    elif config.entry_law == "symmetrized-bernoulli":
        xi = (2.0 * rng.integers(0, 2, size=(n, n)) - 1.0).astype(complex)
    else:  # uniform-disk, radius sqrt(2) so E|xi|^2 = 1
        radius = np.sqrt(2.0 * rng.random((n, n)))
        angle = 2.0 * np.pi * rng.random((n, n))
        xi = radius * np.exp(1j * angle)
    x = np.sqrt(config.profile.s) * xi
    return EnsembleSample(x=x, seed=(config.base_seed, trial))


def hermitize(samp, z: complex) -> np.ndarray:
    """2n x 2n Hermitian embedding [[0, X - z], [X* - conj(z), 0]]."""
    x = samp.x if isinstance(samp, EnsembleSample) else np.asarray(samp)
    n = x.shape[0]
    shifted = x - z * np.eye(n)
    h = np.zeros((2 * n, 2 * n), dtype=complex)
    h[:n, n:] = shifted
    h[n:, :n] = shifted.conj().T
    return h


def resolvent_diag(h: np.ndarray, eta: float) -> np.ndarray:
    """Diagonal of (H - i eta)^{-1}: one factorization, 2n unit-vector solves."""
    if eta <= 0:
        raise ValueError("resolvent_diag requires eta > 0")
    m = h.shape[0]
    f = linalg.lu_factor(h - 1j * eta * np.eye(m))
    g = np.diagonal(linalg.solve_linear(f, np.eye(m, dtype=complex))).copy()
    if np.any(g.imag <= 0):
        raise ArithmeticError("resolvent diagonal lost positivity of the imaginary part")
    return g


@dataclass(frozen=True)
class LocalLawReport:
    z: complex
    eta: float
    g: np.ndarray
    err_inf: float           # ||g - i v||_inf
    err_avg: float           # |<g - i v>|
    predicted_inf: float
    predicted_avg: float
    regime: str
    trace_symmetry_gap: float  # |<g_1> - <g_2>|


def predicted_local_law_bounds(n: int, eta: float, tau: float, tau_star: float = 0.05):
    """(entrywise, averaged) error scales of the three-regime local law."""
    if eta >= 1.0:
        return "large-eta", n ** -0.5 * eta ** -2.0, 1.0 / (n * eta ** 2)
    if tau <= 1.0 - tau_star:
        return "bulk", (n * eta) ** -0.5, 1.0 / (n * eta)
    if tau >= 1.0 + tau_star:
        return "outside", n ** -0.5 + 1.0 / (n * eta), 1.0 / n + (n * eta) ** -2.0
    return "edge", np.nan, np.nan


def local_law_error(config: EnsembleConfig, z: complex, eta: float, trial: int,
                    sol: dyson.DysonSolution | None = None,
                    tau_star: float = 0.05) -> LocalLawReport:
    """Distance of a sampled resolvent diagonal from the deterministic limit."""
    tau = abs(z) ** 2
    if sol is None:
        sol = dyson.solve(config.profile, eta, tau)
    samp = sample(config, trial)
    g = resolvent_diag(hermitize(samp, z), eta)
    diff = g - 1j * sol.v
    n = config.n
    regime, bound_inf, bound_avg = predicted_local_law_bounds(n, eta, tau, tau_star)
    return LocalLawReport(
        z=z, eta=eta, g=g,
        err_inf=float(np.abs(diff).max()),
        err_avg=float(abs(diff.mean())),
        predicted_inf=bound_inf, predicted_avg=bound_avg, regime=regime,
        trace_symmetry_gap=float(abs(g[:n].mean() - g[n:].mean())),
    )


def perturbed_equation_residual(profile: VarianceProfile, g: np.ndarray, z: complex,
                                eta: float) -> np.ndarray:
    """Defect d of the sampled diagonal in the self-consistent equations.

    The resolvent diagonal satisfies g + (i eta + So g - tau/(i eta + Sd g))^{-1} = d
    with a small random d; its size controls ||g - i v||.
    """
    tau = abs(z) ** 2
    denom = 1j * eta + profile.so_apply(g) - tau / (1j * eta + profile.sd_apply(g))
    return g + 1.0 / denom


@dataclass(frozen=True)
class EigenReport:
    z: complex
    lambdas: np.ndarray          # spectrum of the hermitization, ascending
    count_grid: np.ndarray       # dyadic eta levels
    counts: np.ndarray           # #{ |lambda_i| <= eta } per level
    min_abs_lambda: float        # smallest singular value of X - z
    eigenvalues_x: np.ndarray | None = None
    bulk_mask: np.ndarray | None = None
    sup_norms: np.ndarray | None = None   # l-inf norms of l2-normalized bulk eigenvectors

    @property
    def count_constants(self) -> np.ndarray:
        """counts / (n * eta) per grid level (2n = len(lambdas))."""
        n = self.lambdas.shape[0] // 2
        return self.counts / np.maximum(n * self.count_grid, 1e-300)


def _inverse_iteration(x: np.ndarray, lam: complex, rng: np.random.Generator,
                       steps: int = 2) -> np.ndarray:
    n = x.shape[0]
    shifted = x - lam * np.eye(n)
    y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y /= np.linalg.norm(y)
    for _ in range(steps):
        try:
            y = np.linalg.solve(shifted, y)
        except np.linalg.LinAlgError:
            # exactly singular shift: the previous iterate is already the kernel direction
            break
        y /= np.linalg.norm(y)
    return y


def eigen_statistics(samp: EnsembleSample, z: complex, count_grid=None,
                     bulk_threshold: float = 0.8, compute_vectors: bool = False,
                     vector_steps: int = 2) -> EigenReport:
    """Spectral statistics of the hermitization and (optionally) of X itself."""
    x = samp.x
    n = x.shape[0]
    h = hermitize(samp, z)
    lams = np.linalg.eigvalsh((h + h.conj().T) / 2)
    if count_grid is None:
        count_grid = (1.0 / n) * 2.0 ** np.arange(0, int(np.log2(n)) + 1)
    count_grid = np.asarray(count_grid, dtype=float)
    abs_l = np.abs(lams)
    counts = np.array([(abs_l <= lvl).sum() for lvl in count_grid])

    eigs_x = bulk = sup_norms = None
    if compute_vectors:
        eigs_x = linalg.general_eigenvalues(x)
        bulk = np.abs(eigs_x) ** 2 <= bulk_threshold
        # decorrelate the inverse-iteration start vectors from the sample stream
        rng = trial_rng(samp.seed[0] ^ 0x9E3779B97F4A7C15, samp.seed[1])
        norms = []
        for lam in eigs_x[bulk]:
            y = _inverse_iteration(x, lam, rng, steps=vector_steps)
            norms.append(float(np.abs(y).max()))
        sup_norms = np.array(norms)

    return EigenReport(z=z, lambdas=lams, count_grid=count_grid, counts=counts,
                       min_abs_lambda=float(abs_l.min()), eigenvalues_x=eigs_x,
                       bulk_mask=bulk, sup_norms=sup_norms)


@dataclass(frozen=True)
class RadiusReport:
    n: int
    trials: int
    radii: np.ndarray
    deviations: np.ndarray = field(init=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "deviations", np.abs(self.radii - 1.0))

    def quantiles(self, qs=(0.0, 0.25, 0.5, 0.75, 1.0)) -> dict:
        return {f"q{int(100 * q)}": float(np.quantile(self.radii, q)) for q in qs}


def spectral_radius_experiment(config: EnsembleConfig) -> RadiusReport:
    """Spectral radius rho(X) per trial; for a normalized profile the target is 1."""
    dyson._require_normalized(config.profile)
    radii = np.empty(config.trials)
    for t in range(config.trials):
        eigs = linalg.general_eigenvalues(sample(config, t).x)
        radii[t] = np.abs(eigs).max()
    return RadiusReport(n=config.n, trials=config.trials, radii=radii)

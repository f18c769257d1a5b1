"""Dense complex linear-algebra kernels shared by every other module.

All heavy factorizations are delegated to LAPACK (via numpy/scipy); this
module pins down the contracts the rest of the code relies on: pivot
bookkeeping for log-determinants, symmetric eigensolves with ascending
eigenvalues, trace-checked general eigenvalues, and Perron vectors for
entrywise-positive matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class ExactSingularError(Exception):
    """A zero pivot column was encountered during LU elimination."""


class MinusInfinityError(Exception):
    """log|det| underflowed to -inf (a pivot is exactly zero)."""


class NoConvergenceError(Exception):
    """An iterative eigenvalue computation exhausted its budget."""


def _as_square(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag if np.iscomplexobj(a) else a.real)):
        raise ValueError("matrix contains non-finite entries")
    return a


@dataclass(frozen=True)
class LUFactorization:
    """Packed LU factors with pivot bookkeeping."""

    lu: np.ndarray        # packed L (unit lower) and U, LAPACK layout
    piv: np.ndarray       # sequential row-swap vector
    sign: int             # parity of the pivot permutation
    n: int

    @property
    def pivots(self) -> np.ndarray:
        """Magnitudes of the diagonal of U."""
        return np.abs(np.diagonal(self.lu))

    @property
    def min_pivot(self) -> float:
        return float(self.pivots.min()) if self.n else 0.0

    @property
    def near_singular(self) -> bool:
        p = self.pivots
        return bool(self.n and p.min() <= 1e-13 * max(p.max(), 1e-300))


def lu_factor(a) -> LUFactorization:
    """Partial-pivoting LU of a square complex matrix.

    Raises ExactSingularError when a pivot is exactly zero; near-singular
    inputs are only flagged (``near_singular``), not rejected.
    """
    a = _as_square(a)
    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # scipy warns on exact zero pivots
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    if np.any(np.diagonal(lu) == 0):
        raise ExactSingularError("exactly singular matrix: zero pivot encountered")
    sign = 1 if np.count_nonzero(piv != np.arange(len(piv))) % 2 == 0 else -1
    return LUFactorization(lu=lu, piv=piv, sign=sign, n=a.shape[0])


def log_abs_det(f: LUFactorization) -> float:
    """log|det A| = sum of log|u_ii|, accumulated in log space."""
    p = f.pivots
    if np.any(p == 0):
        raise MinusInfinityError("log|det| is -infinity: zero pivot")
    return float(np.sum(np.log(p)))


def log_abs_det_stack(mats: np.ndarray) -> np.ndarray:
    """Vectorized log|det| over a stack of matrices (..., n, n).

    Batched LU path; used where an integrand needs one determinant per
    quadrature node.  -inf entries signal exactly singular members.
    """
    _, logdet = np.linalg.slogdet(mats)
    return logdet


def solve_linear(f: LUFactorization, b) -> np.ndarray:
    """Solve A x = b reusing an existing factorization."""
    b = np.asarray(b)
    if b.shape[0] != f.n:
        raise ValueError(f"dimension mismatch: matrix is {f.n}, rhs has leading dim {b.shape[0]}")
    return scipy.linalg.lu_solve((f.lu, f.piv), b, check_finite=False)


def hermitian_eigen(a, asym_tol: float = 1e-10):
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, eigenvectors as columns).  The input is
    symmetrized first; asymmetry beyond ``asym_tol`` (relative, max-norm) is
    rejected as a usage error.
    """
    a = _as_square(a)
    scale = max(float(np.abs(a).max()), 1e-300)
    asym = float(np.abs(a - a.conj().T).max())
    if asym > asym_tol * scale:
        raise ValueError(f"matrix is not Hermitian: relative asymmetry {asym / scale:.3e}")
    h = (a + a.conj().T) / 2
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NoConvergenceError(str(exc)) from exc
    return w, v


def general_eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a general complex matrix (unordered).

    The result is trace-checked: sum of eigenvalues must match tr(A) to
    1e-8 * n * max|a_ij|.
    """
    a = _as_square(a)
    try:
        w = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(str(exc)) from exc
    scale = max(float(np.abs(a).max()), 1e-300)
    if abs(w.sum() - np.trace(a)) > 1e-8 * a.shape[0] * scale:
        raise NoConvergenceError("eigenvalue sum does not match the trace")
    return w


def power_iteration_radius(a, seed: int = 0, tol: float = 1e-10, max_iter: int = 10000):
    """Spectral-radius estimate by power iteration.

    Returns ``(radius, perron)``.  For entrywise-positive matrices the
    iteration starts from the positive cone, uses the Collatz-Wielandt
    ratio bounds as the stopping test (convergence is then guaranteed),
    and ``perron`` is the positive eigenvector normalized to mean 1.  For
    general matrices ``perron`` is None and rotation-dominated spectra
    raise NoConvergenceError; callers fall back to general_eigenvalues.
    """
    a = _as_square(a)
    n = a.shape[0]
    if n == 1:
        lam = float(abs(a[0, 0]))
        p = np.ones(1) if (not np.iscomplexobj(a) and a[0, 0] > 0) else None
        return lam, p

    positive = not np.iscomplexobj(a) and bool(np.all(a > 0))
    if positive:
        x = np.ones(n)
        for _ in range(max_iter):
            y = a @ x
            ratios = y / x
            lo, hi = float(ratios.min()), float(ratios.max())
            x = y / y.mean()
            if hi - lo <= tol * hi:
                return (lo + hi) / 2, x
        raise NoConvergenceError("power iteration on a positive matrix did not settle")

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + (1j * rng.standard_normal(n) if np.iscomplexobj(a) else 0)
    x = x / np.linalg.norm(x)
    prev = np.inf
    for _ in range(max_iter):
        y = a @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0, None
        x = y / norm
        rayleigh = np.vdot(x, a @ x)
        resid = np.linalg.norm(a @ x - rayleigh * x)
        lam = abs(rayleigh)
        if resid <= tol * max(lam, 1e-300) and abs(lam - prev) <= tol * max(lam, 1e-300):
            return float(lam), None
        prev = lam
    raise NoConvergenceError("power iteration did not converge (defective or rotating spectrum)")

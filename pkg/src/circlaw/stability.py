"""Stability operator of the self-consistent equations and its factorization.

The linearization L of the vector equations around their solution admits
the factorization L = V^{-1} (1 - T F) V with V diagonal positive and T, F
symmetric.  This module materializes all four operators as dense matrices,
extracts the extremal spectral data of F (top eigenvector f_plus, the
mirrored f_minus, the norm), and checks the exact operator identities that
make the near-unstable direction harmless:

    L^*(e_- vt/u) = eta e_-          (exact cancellation)
    F f_- = -||F|| f_-               (block antisymmetry)
    spec(T) = {-1} u {2 tau u_i - 1}

Inner products and norms on vectors follow the normalized convention
<x, y> = mean(conj(x) y), ||x||_2^2 = mean(|x|^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .dyson import DysonSolution, VarianceProfile


def _e_minus(n: int) -> np.ndarray:
    e = np.ones(2 * n)
    e[n:] = -1.0
    return e


def _norm2(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def stability_matrix(profile: VarianceProfile, sol: DysonSolution) -> np.ndarray:
    """Dense 2n x 2n stability operator L y = y + v^2 (So y) - tau u^2 (Sd y)."""
    v, u2, tau = sol.v, sol.u2, sol.tau
    so = profile.so_matrix()
    sd = profile.sd_matrix()
    return np.eye(2 * profile.n) + (v ** 2)[:, None] * so - tau * (u2 ** 2)[:, None] * sd


@dataclass(frozen=True)
class StabilityOperators:
    eta: float
    tau: float
    L: np.ndarray
    T: np.ndarray
    F: np.ndarray
    V: np.ndarray          # diagonal matrix
    v_diag: np.ndarray     # its diagonal, sqrt(vt / (u v))
    f_plus: np.ndarray
    f_minus: np.ndarray
    norm_F: float
    a_vec: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0] // 2


def _top_pair_of_f(f_block: np.ndarray, tol: float, max_iter: int):
    """Perron data of F = [[0, B], [B^t, 0]] with B entrywise positive.

    F itself has the doubly-degenerate extremal pair +-||F||, so the power
    iteration runs on F^2 (block diagonal, entrywise positive) where the
    Collatz-Wielandt ratios give guaranteed two-sided convergence; the
    second half of the eigenvector is recovered through B^t p / ||F||.
    """
    bbt = f_block @ f_block.T
    w = np.ones(f_block.shape[0])
    lam_sq = 0.0
    for _ in range(max_iter):
        y = bbt @ w
        ratios = y / w
        lo, hi = float(ratios.min()), float(ratios.max())
        lam_sq = 0.5 * (lo + hi)
        w = y / np.linalg.norm(y)
        if hi - lo <= tol * hi:
            break
    else:
        raise linalg.NoConvergenceError("power iteration for the top eigenvector of F did not converge")
    lam = float(np.sqrt(lam_sq))
    p = w
    q = f_block.T @ p / lam
    f_plus = np.concatenate([p, q])
    return lam, f_plus / _norm2(f_plus)


def build(profile: VarianceProfile, sol: DysonSolution,
          power_tol: float = 1e-12, power_max_iter: int = 200) -> StabilityOperators:
    """Materialize L, T, F, V and the extremal spectral data of F."""
    n = profile.n
    v, vt, u2, tau = sol.v, sol.v_tilde, sol.u2, sol.tau
    u = sol.u

    lmat = stability_matrix(profile, sol)

    # T = -1 + tau * diag(u) * [[1, 1], [1, 1]]  (block-identity pattern)
    neg = -sol.v1 * sol.v2 / u
    tmat = np.zeros((2 * n, 2 * n))
    tmat[:n, :n] = np.diag(neg)
    tmat[n:, n:] = np.diag(neg)
    tmat[:n, n:] = np.diag(tau * u)
    tmat[n:, :n] = np.diag(tau * u)

    d = np.sqrt(v * u2 / vt)
    fmat = d[:, None] * profile.so_matrix() * d[None, :]

    v_diag = np.sqrt(vt / (u2 * v))
    vmat = np.diag(v_diag)

    norm_f, f_plus = _top_pair_of_f(fmat[:n, n:], power_tol, power_max_iter)
    resid = np.abs(fmat @ f_plus - norm_f * f_plus).max()
    if resid > 1e-8 * max(norm_f, 1e-300):
        raise linalg.NoConvergenceError(f"f_plus eigen-residual too large: {resid:.3e}")
    f_minus = f_plus * _e_minus(n)

    vv = v_diag * v
    a_vec = _e_minus(n) * vv / _norm2(vv)

    return StabilityOperators(eta=sol.eta, tau=tau, L=lmat, T=tmat, F=fmat, V=vmat,
                              v_diag=v_diag, f_plus=f_plus, f_minus=f_minus,
                              norm_F=norm_f, a_vec=a_vec)


def norm_f_formula(ops: StabilityOperators, sol: DysonSolution) -> float:
    """Closed form ||F|| = 1 - eta <f+ sqrt(v/(eta+So v))> / <f+ sqrt(v(eta+So v))>.

    eta + So v equals vt/u, so both weights are expressible through the
    solution alone; the value must match the power-iteration eigenvalue.
    """
    w = sol.v_tilde / sol.u2          # = eta + So v
    num = float(np.mean(ops.f_plus * np.sqrt(sol.v / w)))
    den = float(np.mean(ops.f_plus * np.sqrt(sol.v * w)))
    return 1.0 - sol.eta * num / den


@dataclass(frozen=True)
class IdentityReport:
    eta: float
    tau: float
    adjoint_residual: float        # ||L^*(e_- vt/u) - eta e_-||_inf
    fminus_residual: float         # ||F f_- + ||F|| f_-||_inf
    spectrum_t_residual: float     # Hausdorff gap to {-1} u {2 tau u - 1}
    fminus_vs_a: float             # ||f_- - a||_inf
    norm_formula_gap: float        # |power iteration - closed form|
    factorization_residual: float  # ||L - V^{-1}(1 - TF)V||_max

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "tau": self.tau,
            "adjoint_residual": self.adjoint_residual,
            "fminus_residual": self.fminus_residual,
            "spectrum_t_residual": self.spectrum_t_residual,
            "fminus_vs_a": self.fminus_vs_a,
            "norm_formula_gap": self.norm_formula_gap,
            "factorization_residual": self.factorization_residual,
        }


def spectrum_t_expected(sol: DysonSolution) -> np.ndarray:
    """spec(T) = {-1 (n-fold)} u {2 tau u_i - 1}, via 2 tau u - 1 = tau u - v vt / u."""
    return np.sort(np.concatenate([-np.ones(sol.n), 2.0 * sol.tau * sol.u - 1.0]))


def factorization_residual(ops: StabilityOperators) -> float:
    """Max-norm defect of L = V^{-1} (1 - TF) V."""
    inner = np.eye(2 * ops.n) - ops.T @ ops.F
    rebuilt = (1.0 / ops.v_diag)[:, None] * inner * ops.v_diag[None, :]
    return float(np.abs(ops.L - rebuilt).max())


def verify_identities(ops: StabilityOperators, sol: DysonSolution) -> IdentityReport:
    n = ops.n
    em = _e_minus(n)

    lhs = ops.L.T @ (em * sol.v_tilde / sol.u2)
    adjoint_residual = float(np.abs(lhs - ops.eta * em).max())

    fminus_residual = float(np.abs(ops.F @ ops.f_minus + ops.norm_F * ops.f_minus).max())

    eig_t = np.sort(np.linalg.eigvalsh(ops.T))
    spectrum_t_residual = float(np.abs(eig_t - spectrum_t_expected(sol)).max())

    fminus_vs_a = float(np.abs(ops.f_minus - ops.a_vec).max())
    norm_formula_gap = abs(ops.norm_F - norm_f_formula(ops, sol))

    return IdentityReport(
        eta=ops.eta, tau=ops.tau,
        adjoint_residual=adjoint_residual,
        fminus_residual=fminus_residual,
        spectrum_t_residual=spectrum_t_residual,
        fminus_vs_a=fminus_vs_a,
        norm_formula_gap=norm_formula_gap,
        factorization_residual=factorization_residual(ops),
    )


def gap_probe(ops: StabilityOperators) -> float:
    """1 minus the third-largest |eigenvalue| of F.

    The extremal pair +-||F|| belongs to span{f+, f-}; the remainder of the
    spectrum must stay a positive distance below one for tau away from the
    edge.  Uses the full symmetric eigendecomposition of F.
    """
    w = np.sort(np.abs(np.linalg.eigvalsh(ops.F)))[::-1]
    third = w[2] if w.size > 2 else 0.0
    return float(1.0 - third)


def one_minus_tf_smallest_singular(ops: StabilityOperators) -> float:
    """sigma_min(1 - TF); bounded below by c*eta for eta > 0."""
    m = np.eye(2 * ops.n) - ops.T @ ops.F
    return float(np.linalg.svd(m, compute_uv=False)[-1])


def restricted_inverse_norm(ops: StabilityOperators) -> float:
    """||(1 - TF)^{-1} Q||_2 with Q the projection off f_-.

    Stays bounded uniformly down to eta -> 0 in the bulk, unlike the full
    inverse whose norm grows like 1/eta along f_-.
    """
    n2 = 2 * ops.n
    q = np.eye(n2) - np.outer(ops.f_minus, ops.f_minus) / n2
    m = np.eye(n2) - ops.T @ ops.F
    return float(np.linalg.norm(np.linalg.solve(m, q), 2))


def diagnostic_report(profile: VarianceProfile, solutions) -> dict:
    """JSON-ready dump of identity residuals, ||F||, gap and spec(T) per (eta, tau)."""
    report = {}
    for sol in solutions:
        ops = build(profile, sol)
        rep = verify_identities(ops, sol)
        key = f"eta={sol.eta:.6g},tau={sol.tau:.6g}"
        report[key] = {
            **rep.to_dict(),
            "norm_F": ops.norm_F,
            "gap": gap_probe(ops),
            "spectrum_T": np.sort(np.linalg.eigvalsh(ops.T)).tolist(),
        }
    return report

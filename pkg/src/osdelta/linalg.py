"""Deterministic truncated SVD returning ``U_k Sigma_k`` and ``V_k^T``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, svds

from .errors import ArgumentError, IntegrityError, NumericError

# Above this size (and for small k) the Lanczos path beats dense LAPACK.
DENSE_MAX_DIM = 384
RESIDUAL_TOL = 1e-6
MAX_ITER = 100


@dataclass(frozen=True)
class FactorPair:
    u_prime: np.ndarray  # n x k, float32, columns scaled by singular values
    v_prime: np.ndarray  # k x d, float32, orthonormal rows
    singular_values: np.ndarray  # float64, non-increasing

    @property
    def rank(self) -> int:
        return self.u_prime.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u_prime.shape[0], self.v_prime.shape[1]


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> None:
    # Largest-|.| entry of each right singular vector made nonnegative;
    # argmax returns the lowest index on ties.
    pivots = np.argmax(np.abs(vt), axis=1)
    flip = vt[np.arange(vt.shape[0]), pivots] < 0
    u[:, flip] *= -1
    vt[flip, :] *= -1


def _dense(a: np.ndarray, k: int):
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"dense SVD did not converge: {exc}") from exc
    return u[:, :k], s[:k], vt[:k, :]


def _lanczos(a: np.ndarray, k: int):
    n, d = a.shape
    v0 = np.full(min(n, d), 1.0 / np.sqrt(min(n, d)))
    u, s, vt = svds(a, k=k, v0=v0, tol=RESIDUAL_TOL * 1e-4, maxiter=MAX_ITER * k,
                    solver="arpack")
    order = np.argsort(-s, kind="stable")
    return u[:, order], s[order], vt[order, :]


def relative_residual(a: np.ndarray, u: np.ndarray, s: np.ndarray, vt: np.ndarray) -> float:
    """max_i ||A v_i - s_i u_i|| / s_1 (0 for the zero matrix)."""
    if s.size == 0 or s[0] == 0:
        return 0.0
    r = a @ vt.T - u * s
    return float(np.max(np.linalg.norm(r, axis=0)) / s[0])


def truncated_svd(m, k: int) -> FactorPair:
    """Rank-``k`` truncated SVD of ``m``.

    Computed in float64; the factors are returned in float32 because that is
    how they are stored. Small matrices use LAPACK, larger ones ARPACK with a
    fixed start vector (falling back to LAPACK if it stalls), so identical
    input bytes always give identical output bytes.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ArgumentError(f"expected a 2-D matrix, got shape {a.shape}")
    n, d = a.shape
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= min(n, d):
        raise ArgumentError(f"rank k={k} outside [1, {min(n, d)}] for a {n}x{d} matrix")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("matrix contains non-finite values")
    k = int(k)

    if min(n, d) <= DENSE_MAX_DIM or 4 * k >= min(n, d) or not np.any(a):
        u, s, vt = _dense(a, k)
    else:
        try:
            u, s, vt = _lanczos(a, k)
        except (ArpackNoConvergence, ArpackError):
            u, s, vt = _dense(a, k)
        else:
            if relative_residual(a, u, s, vt) > RESIDUAL_TOL:
                u, s, vt = _dense(a, k)
    u = np.array(u)
    vt = np.array(vt)
    res = relative_residual(a, u, s, vt)
    if res > RESIDUAL_TOL:
        raise NumericError(f"truncated SVD residual {res:.3e} exceeds {RESIDUAL_TOL:.0e}")
    s = np.maximum(s, 0.0)
    _fix_signs(u, vt)
    u_prime = (u * s).astype(np.float32)
    v_prime = vt.astype(np.float32)
    u_prime.flags.writeable = False
    v_prime.flags.writeable = False
    s.flags.writeable = False
    return FactorPair(u_prime, v_prime, s)


def reconstruct(f: FactorPair) -> np.ndarray:
    """Dense ``u_prime @ v_prime`` as float32 (accumulated in float64)."""
    if f.u_prime.ndim != 2 or f.v_prime.ndim != 2 or f.u_prime.shape[1] != f.v_prime.shape[0]:
        raise IntegrityError(
            f"factor shapes {f.u_prime.shape} and {f.v_prime.shape} do not chain")
    prod = f.u_prime.astype(np.float64) @ f.v_prime.astype(np.float64)
    return prod.astype(np.float32)

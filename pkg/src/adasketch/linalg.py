"""Dense factorizations and transforms used by the solvers.

Thin wrappers around LAPACK plus a fast Walsh-Hadamard transform. All
routines are deterministic and operate on float64 arrays.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NotPositiveDefinite,
    NotPowerOfTwo,
)

__all__ = ["cholesky", "tri_solve", "fwht", "sym_eig", "is_power_of_two"]

_SYM_RTOL = 1e-12


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    return M


def cholesky(M: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == M for symmetric positive definite M.

    The input is symmetrized as (M + M.T)/2 before factoring; asymmetry
    beyond 1e-12 relative is rejected.
    """
    M = _as_matrix(M, "M")
    scale = np.abs(M).max()
    if scale > 0 and np.abs(M - M.T).max() > _SYM_RTOL * scale:
        raise DimensionMismatch("matrix is not symmetric within 1e-12 relative")
    M = (M + M.T) / 2.0
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def tri_solve(L: np.ndarray, z: np.ndarray, transposed: bool = False) -> np.ndarray:
    """Solve L y = z (or L.T y = z when transposed) for lower-triangular L."""
    L = _as_matrix(L, "L")
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != L.shape[0]:
        raise DimensionMismatch(
            f"rhs has leading dimension {z.shape[0]}, factor is {L.shape[0]}"
        )
    return scipy.linalg.solve_triangular(L, z, lower=True, trans=1 if transposed else 0)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def fwht(x: np.ndarray, normalized: bool = True) -> np.ndarray:
    """Walsh-Hadamard transform along axis 0, in O(n log n).

    Accepts a vector or a matrix (each column transformed). The length of
    axis 0 must be a power of two. With normalized=True the transform is
    orthonormal (an involution); otherwise entries of the implied matrix
    are +-1.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not is_power_of_two(n):
        raise NotPowerOfTwo(f"length {n} is not a power of two")
    squeeze = x.ndim == 1
    y = x.reshape(n, -1).copy()
    c = y.shape[1]
    h = 1
    while h < n:
        y = y.reshape(n // (2 * h), 2, h * c)
        even = y[:, 0] + y[:, 1]
        odd = y[:, 0] - y[:, 1]
        y[:, 0] = even
        y[:, 1] = odd
        h *= 2
    y = y.reshape(n, c)
    if normalized:
        y /= np.sqrt(n)
    return y[:, 0] if squeeze else y


def sym_eig(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (w, V) with eigenvalues w sorted descending and orthonormal
    eigenvectors in the columns of V.
    """
    M = _as_matrix(M, "M")
    M = (M + M.T) / 2.0
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return w[::-1].copy(), V[:, ::-1].copy()

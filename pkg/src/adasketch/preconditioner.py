"""Sketched-Hessian preconditioner H_S = (SA).T (SA) + nu^2 Lambda.

Two factorization paths, chosen by shape: for m >= d a Cholesky of the
d x d matrix H_S; for m < d a Cholesky of the m x m capacitance matrix
W_S = SA Lam^-1 (SA).T + nu^2 I, applied through the matrix inversion
identity

    H_S^-1 z = (Lam^-1 / nu^2) (z - (SA).T W_S^-1 SA Lam^-1 z).

Both paths produce identical solves up to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import SketchedData
from .errors import NegativeValue, NotPositiveDefinite
from .linalg import cholesky, sym_eig, tri_solve
from .problem import RegularizedProblem

__all__ = ["Preconditioner", "build", "approx_newton_decrement", "cs_deviation"]


@dataclass
class Preconditioner:
    SA: np.ndarray
    nu: float
    lam: np.ndarray
    path: str
    L: np.ndarray

    @property
    def m(self) -> int:
        return self.SA.shape[0]

    @property
    def d(self) -> int:
        return self.SA.shape[1]

    def solve(self, Z: np.ndarray) -> np.ndarray:
        """H_S^-1 Z, columnwise."""
        Z = np.asarray(Z, dtype=np.float64)
        vec = Z.ndim == 1
        Zm = Z[:, None] if vec else Z
        if self.path == "cholesky-d":
            out = tri_solve(self.L, tri_solve(self.L, Zm), transposed=True)
        else:
            Y = Zm / self.lam[:, None]
            u = tri_solve(self.L, tri_solve(self.L, self.SA @ Y), transposed=True)
            out = (Y - (self.SA.T @ u) / self.lam[:, None]) / self.nu**2
        return out[:, 0] if vec else out

    def sketched_hessian(self) -> np.ndarray:
        """Dense H_S; d x d, intended for diagnostics at desk scale."""
        return self.SA.T @ self.SA + (self.nu**2) * np.diag(self.lam)


def build(sa, nu: float, lam: np.ndarray) -> Preconditioner:
    """Factor H_S from sketched data (SketchedData or a raw m x d array).

    Ties at m = d take the dense d-path.
    """
    SA = np.asarray(sa.SA if isinstance(sa, SketchedData) else sa, np.float64)
    m, d = SA.shape
    nu = float(nu)
    lam = np.asarray(lam, dtype=np.float64)
    if m >= d:
        H_S = SA.T @ SA + (nu**2) * np.diag(lam)
        return Preconditioner(SA, nu, lam, "cholesky-d", cholesky(H_S))
    T = SA * (1.0 / lam)[None, :]
    W_S = T @ SA.T + (nu**2) * np.eye(m)
    return Preconditioner(SA, nu, lam, "woodbury-m", cholesky(W_S))


def approx_newton_decrement(P: Preconditioner, grad: np.ndarray) -> float:
    """delta_tilde = (1/2) trace(grad.T H_S^-1 grad), summed over columns.

    Raises NegativeValue when roundoff drives the quadratic form below
    -1e-12 * ||grad||_F^2; smaller negatives are clamped to zero.
    """
    grad = np.asarray(grad, dtype=np.float64)
    val = 0.5 * float(np.sum(grad * P.solve(grad)))
    floor = 1e-12 * float(np.sum(grad * grad))
    if val < -floor:
        raise NegativeValue(f"quadratic form {val} below -1e-12 * ||grad||^2")
    return max(val, 0.0)


def cs_deviation(
    P: Preconditioner,
    p: RegularizedProblem,
    hinvsqrt: np.ndarray | None = None,
) -> tuple[float, float]:
    """Extreme eigenvalues of C_S - I with C_S = H^-1/2 H_S H^-1/2.

    Forms H densely; desk-scale d only. Pass a cached H^-1/2 via hinvsqrt
    when calling repeatedly on one problem. ||C_S - I||_2 is the max of
    the absolute values of the returned pair.
    """
    if hinvsqrt is None:
        w, V = sym_eig(p.hessian())
        if w.min() <= 0:
            raise NotPositiveDefinite("H must be positive definite")
        hinvsqrt = (V / np.sqrt(w)[None, :]) @ V.T
    C = hinvsqrt @ P.sketched_hessian() @ hinvsqrt
    w, _ = sym_eig(C)
    return float(w[0] - 1.0), float(w[-1] - 1.0)

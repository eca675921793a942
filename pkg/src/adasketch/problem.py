"""Quadratically regularized least-squares problems and data handling.

The objective is f(x) = (1/2) <x, H x> - <b, x> with Hessian
H = A.T A + nu^2 * Lambda, where Lambda is diagonal with entries >= 1.
Multiple right-hand sides are carried as columns of B; error quantities
are summed over columns.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidDecay,
    IoFormatError,
    MalformedCsv,
    NonNumericField,
)
from .linalg import cholesky, sym_eig, tri_solve

__all__ = [
    "RegularizedProblem",
    "ExactSolution",
    "from_ridge",
    "direct_solve",
    "exact_error",
    "effective_dimension",
    "nu_for_target_dimension",
    "gen_synthetic",
    "load_csv",
    "random_features",
    "save_matrix",
    "load_matrix",
]


@dataclass
class RegularizedProblem:
    """Data matrix A (n x d), targets B (d x c), scale nu, diagonal lam."""

    A: np.ndarray
    B: np.ndarray
    nu: float
    lam: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.A.ndim != 2:
            raise DimensionMismatch(f"A must be 2-D, got shape {self.A.shape}")
        if self.B.ndim == 1:
            self.B = self.B[:, None]
        n, d = self.A.shape
        if self.B.shape[0] != d:
            raise DimensionMismatch(
                f"B has {self.B.shape[0]} rows, expected d = {d}"
            )
        self.nu = float(self.nu)
        if not np.isfinite(self.nu) or self.nu <= 0:
            raise ValueError(f"nu must be positive and finite, got {self.nu}")
        if self.lam is None:
            self.lam = np.ones(d)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.lam.shape != (d,):
            raise DimensionMismatch(
                f"lam must have shape ({d},), got {self.lam.shape}"
            )
        if not np.all(np.isfinite(self.lam)) or self.lam.min() < 1.0:
            raise ValueError("lam entries must be finite and >= 1")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("A and B must be finite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def c(self) -> int:
        return self.B.shape[1]

    def hess_mult(self, X: np.ndarray) -> np.ndarray:
        """H @ X without forming H, at O(n d) per column."""
        X = np.asarray(X, dtype=np.float64)
        vec = X.ndim == 1
        Xm = X[:, None] if vec else X
        out = self.A.T @ (self.A @ Xm) + (self.nu**2) * (self.lam[:, None] * Xm)
        return out[:, 0] if vec else out

    def gradient(self, X: np.ndarray) -> np.ndarray:
        """grad f(x) = H x - b, columnwise."""
        X = np.asarray(X, dtype=np.float64)
        vec = X.ndim == 1
        Xm = X[:, None] if vec else X
        if Xm.shape != (self.d, self.c):
            raise DimensionMismatch(
                f"iterate has shape {X.shape}, expected ({self.d}, {self.c})"
            )
        out = self.hess_mult(Xm) - self.B
        return out[:, 0] if vec else out

    def hessian(self) -> np.ndarray:
        """Dense d x d Hessian; intended for d at desk scale."""
        return self.A.T @ self.A + (self.nu**2) * np.diag(self.lam)


@dataclass
class ExactSolution:
    """Minimizer x_star (d x c) of the regularized objective."""

    x_star: np.ndarray

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=np.float64)
        if self.x_star.ndim == 1:
            self.x_star = self.x_star[:, None]


def from_ridge(A: np.ndarray, Y: np.ndarray, lambda_reg: float) -> RegularizedProblem:
    """Ridge regression min ||A x - Y||^2 / 2 + lambda/2 ||x||^2 as a problem.

    Maps to B = A.T Y, nu = sqrt(lambda_reg), Lambda = I.
    """
    if lambda_reg <= 0:
        raise ValueError(f"lambda_reg must be positive, got {lambda_reg}")
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != A.shape[0]:
        raise DimensionMismatch(
            f"Y has {Y.shape[0]} rows, expected n = {A.shape[0]}"
        )
    return RegularizedProblem(A=A, B=A.T @ Y, nu=float(np.sqrt(lambda_reg)))


def direct_solve(p: RegularizedProblem) -> ExactSolution:
    """Solve H x = B by a dense Cholesky factorization of H."""
    L = cholesky(p.hessian())
    y = tri_solve(L, p.B)
    x = tri_solve(L, y, transposed=True)
    return ExactSolution(x_star=x)


def exact_error(p: RegularizedProblem, x: np.ndarray, sol: ExactSolution) -> float:
    """delta_x = (1/2) ||x - x_star||_H^2, summed over columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    diff = x - sol.x_star
    return 0.5 * float(np.sum(diff * p.hess_mult(diff)))


def _spectrum(A: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Eigenvalues (descending, clipped at 0) of Lam^-1/2 A.T A Lam^-1/2."""
    G = A * (1.0 / np.sqrt(lam))[None, :]
    w, _ = sym_eig(G.T @ G)
    return np.clip(w, 0.0, None)


def effective_dimension(p: RegularizedProblem) -> float:
    """Stable rank of the preconditioned data: sum of s_i^2/(s_i^2 + nu^2)
    over the spectrum, normalized by its largest term.

    Returns 0.0 for A = 0 by convention.
    """
    w = _spectrum(p.A, p.lam)
    terms = w / (w + p.nu**2)
    top = terms.max() if terms.size else 0.0
    if top <= 0.0:
        return 0.0
    return float(terms.sum() / top)


def nu_for_target_dimension(
    A: np.ndarray,
    lam: np.ndarray | None,
    target: float,
    tol: float = 1e-6,
) -> float:
    """Bisect on nu so the effective dimension hits `target`.

    The effective dimension is decreasing in nu; raises ValueError when the
    target lies outside the attainable range.
    """
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[1]
    if lam is None:
        lam = np.ones(d)
    w = _spectrum(A, np.asarray(lam, dtype=np.float64))

    def de(nu: float) -> float:
        terms = w / (w + nu * nu)
        top = terms.max()
        return float(terms.sum() / top) if top > 0 else 0.0

    lo, hi = 1e-10, 1e10
    if not (de(hi) <= target <= de(lo)):
        raise ValueError(
            f"target {target} outside attainable range [{de(hi):.2f}, {de(lo):.2f}]"
        )
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if de(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12 or abs(de(mid) - target) <= tol:
            break
    return float(np.sqrt(lo * hi))


def gen_synthetic(
    n: int,
    d: int,
    decay: float,
    nu: float,
    seed: int,
    c: int = 1,
) -> tuple[RegularizedProblem, ExactSolution]:
    """Random instance with singular values decay^j, j = 1..d, and a known
    minimizer.

    A = U diag(decay^j) V.T with U, V orthonormalized seeded Gaussians;
    B = H x_true so the returned solution is exact by construction.
    """
    if not (0.0 < decay < 1.0):
        raise InvalidDecay(f"decay must lie in (0, 1), got {decay}")
    if d > n:
        raise DimensionMismatch(f"need n >= d, got n={n} d={d}")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sigma = decay ** np.arange(1, d + 1)
    A = (U * sigma[None, :]) @ V.T
    x_true = rng.standard_normal((d, c))
    lam = np.ones(d)
    B = A.T @ (A @ x_true) + (nu**2) * (lam[:, None] * x_true)
    p = RegularizedProblem(A=A, B=B, nu=nu, lam=lam)
    return p, ExactSolution(x_star=x_true)


def load_csv(path, label_mode: str = "none") -> tuple[np.ndarray, np.ndarray]:
    """Read a numeric CSV into (features, targets).

    label_mode:
      "none"              -> all columns are features, targets has 0 columns
      "last-column-real"  -> last column is a real-valued target
      "last-column-class" -> last column holds integer class labels, one-hot
                             encoded in ascending label order

    A first row with any non-numeric field is treated as a header. Ragged
    rows raise MalformedCsv; non-numeric data fields raise NonNumericField,
    both with locations.
    """
    if label_mode not in ("none", "last-column-real", "last-column-class"):
        raise ValueError(f"unknown label_mode {label_mode!r}")
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise MalformedCsv("file holds no rows")

    def parse(row, idx):
        vals = []
        for j, fieldval in enumerate(row):
            try:
                vals.append(float(fieldval))
            except ValueError:
                raise NonNumericField(
                    f"row {idx}, column {j}: {fieldval!r} is not numeric"
                ) from None
        return vals

    start = 0
    try:
        first = parse(rows[0], 0)
    except NonNumericField:
        start = 1
        if len(rows) == 1:
            raise MalformedCsv("file holds only a header row") from None
        first = parse(rows[start], start)
    width = len(rows[start])
    data = [first]
    for idx in range(start + 1, len(rows)):
        if len(rows[idx]) != width:
            raise MalformedCsv(
                f"row {idx} has {len(rows[idx])} fields, expected {width}"
            )
        data.append(parse(rows[idx], idx))
    M = np.asarray(data, dtype=np.float64)

    if label_mode == "none":
        return M, np.zeros((M.shape[0], 0))
    if M.shape[1] < 2:
        raise MalformedCsv("need at least two columns to split off labels")
    X, y = M[:, :-1], M[:, -1]
    if label_mode == "last-column-real":
        return X, y[:, None]
    labels = np.unique(y)
    if not np.all(labels == np.round(labels)):
        bad = int(np.argmax(y != np.round(y)))
        raise NonNumericField(
            f"row {start + bad}, column {M.shape[1] - 1}: "
            f"label {y[bad]!r} is not an integer"
        )
    Y = (y[:, None] == labels[None, :]).astype(np.float64)
    return X, Y


def random_features(
    X: np.ndarray, gamma: float, n_features: int, seed: int
) -> np.ndarray:
    """Random cosine features approximating the Gaussian kernel
    exp(-gamma ||x - x'||^2).

    z(x) = sqrt(2/D) cos(W x + u) with W_ij ~ N(0, 2 gamma) i.i.d. and
    u ~ Uniform[0, 2 pi]; E[z(x).T z(x')] equals the kernel.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if n_features < 1:
        raise ValueError(f"n_features must be >= 1, got {n_features}")
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n_features, X.shape[1])) * np.sqrt(2.0 * gamma)
    u = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    return np.sqrt(2.0 / n_features) * np.cos(X @ W.T + u[None, :])


_MAGIC = b"ADSK1"


def save_matrix(path, M: np.ndarray) -> None:
    """Write a matrix in the package binary format: magic 'ADSK1', u64 rows,
    u64 cols (little-endian), then float64 entries in row-major order."""
    M = np.ascontiguousarray(np.asarray(M, dtype=np.float64))
    if M.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {M.shape}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", M.shape[0], M.shape[1]))
        fh.write(M.astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a matrix written by save_matrix."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise IoFormatError(f"bad magic {magic!r} in {path}")
        header = fh.read(16)
        if len(header) != 16:
            raise IoFormatError(f"truncated header in {path}")
        rows, cols = struct.unpack("<QQ", header)
        buf = fh.read(rows * cols * 8)
    if len(buf) != rows * cols * 8:
        raise IoFormatError(f"truncated payload in {path}")
    return np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()

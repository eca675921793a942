"""Randomized embeddings: Gaussian, SRHT, and sparse (SJLT) sketches.

Each family draws S (m x n) from a seeded generator and returns only the
sketched data SA; S itself is never materialized except for the Gaussian
family. Critical sketch sizes m_delta give the scale at which the sketched
Hessian concentrates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .errors import InvalidProbability, InvalidSparsity, SketchTooLarge
from .linalg import fwht

__all__ = [
    "SketchSpec",
    "SketchedData",
    "sketch",
    "sketch_gaussian",
    "sketch_srht",
    "sketch_sjlt",
    "critical_m_srht",
    "critical_m_gaussian",
    "padded_rows",
    "derive_seed",
]

FAMILIES = ("gaussian", "srht", "sjlt")


@dataclass(frozen=True)
class SketchSpec:
    family: str
    m: int
    seed: int
    s: int = 1


@dataclass
class SketchedData:
    """Sketch output SA (m x d) plus the spec that produced it and the
    original row count n."""

    SA: np.ndarray
    spec: SketchSpec
    n: int

    @property
    def m(self) -> int:
        return self.SA.shape[0]


def derive_seed(base: int, k: int) -> int:
    """Deterministic child seed for the k-th redraw under a base seed."""
    return int(np.random.SeedSequence((base, k)).generate_state(1, np.uint64)[0])


def _check_m(m: int, n: int) -> None:
    if int(m) != m or m < 1:
        raise SketchTooLarge(f"sketch size must be a positive integer, got {m}")


def sketch_gaussian(A: np.ndarray, m: int, seed: int) -> SketchedData:
    """Dense Gaussian embedding, entries N(0, 1/m)."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    _check_m(m, n)
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((m, n)) / np.sqrt(m)
    return SketchedData(SA=S @ A, spec=SketchSpec("gaussian", m, seed), n=n)


def padded_rows(n: int) -> int:
    """Rows after zero-padding to the next power of two."""
    return 1 << max(0, int(np.ceil(np.log2(n))))


def sketch_srht(A: np.ndarray, m: int, seed: int) -> SketchedData:
    """Subsampled randomized Hadamard transform S = R H E.

    A is zero-padded to n_padded = 2^ceil(log2 n) rows; E flips signs, H is
    the normalized Walsh-Hadamard transform, and R keeps m rows sampled
    without replacement, scaled by sqrt(n_padded / m). Draw order per seed:
    n sign flips, then the row subsample.
    """
    A = np.asarray(A, dtype=np.float64)
    n, d = A.shape
    _check_m(m, n)
    n_pad = padded_rows(n)
    if m > n_pad:
        raise SketchTooLarge(f"m = {m} exceeds padded row count {n_pad}")
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
    Y = np.zeros((n_pad, d))
    Y[:n] = A * signs[:, None]
    Y = fwht(Y, normalized=True)
    idx = rng.choice(n_pad, size=m, replace=False)
    SA = Y[idx] * np.sqrt(n_pad / m)
    return SketchedData(SA=SA, spec=SketchSpec("srht", m, seed), n=n)


def sketch_sjlt(A: np.ndarray, m: int, seed: int, s: int = 1) -> SketchedData:
    """Sparse embedding: each column of S holds s nonzeros +-1/sqrt(s) in
    distinct rows.

    Draws are consumed in column order (rows first, then signs, per batch);
    rows within a column are sampled without replacement.
    """
    A = np.asarray(A, dtype=np.float64)
    n, d = A.shape
    _check_m(m, n)
    if int(s) != s or not (1 <= s <= m):
        raise InvalidSparsity(f"need 1 <= s <= m = {m}, got s = {s}")
    rng = np.random.default_rng(seed)
    if s == 1:
        rows = rng.integers(0, m, size=n)
    else:
        rows = np.empty(n * s, dtype=np.int64)
        for j in range(n):
            rows[j * s:(j + 1) * s] = rng.choice(m, size=s, replace=False)
    signs = rng.integers(0, 2, size=n * s) * 2.0 - 1.0
    cols = np.repeat(np.arange(n), s)
    S = scipy.sparse.csr_matrix(
        (signs / np.sqrt(s), (rows.ravel(), cols)), shape=(m, n)
    )
    return SketchedData(SA=S @ A, spec=SketchSpec("sjlt", m, seed, s=s), n=n)


def sketch(A: np.ndarray, spec: SketchSpec) -> SketchedData:
    """Dispatch on spec.family."""
    if spec.family == "gaussian":
        return sketch_gaussian(A, spec.m, spec.seed)
    if spec.family == "srht":
        return sketch_srht(A, spec.m, spec.seed)
    if spec.family == "sjlt":
        return sketch_sjlt(A, spec.m, spec.seed, s=spec.s)
    raise ValueError(f"unknown sketch family {spec.family!r}")


def _check_tail(delta: float, d_e: float) -> None:
    if not (0.0 < delta < 1.0):
        raise InvalidProbability(f"delta must lie in (0, 1), got {delta}")
    if d_e < 1.0:
        raise ValueError(f"d_e must be >= 1, got {d_e}")


def critical_m_srht(d_e: float, n: int, delta: float) -> float:
    """Sketch size above which the SRHT deviation bound holds with
    probability 1 - delta:

        16 log(16 d_e / delta) (sqrt(d_e) + sqrt(8 log(2 n / delta)))^2
    """
    _check_tail(delta, d_e)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    tail = np.sqrt(d_e) + np.sqrt(8.0 * np.log(2.0 * n / delta))
    return float(16.0 * np.log(16.0 * d_e / delta) * tail**2)


def critical_m_gaussian(d_e: float, delta: float) -> float:
    """Gaussian analogue of critical_m_srht:

        (sqrt(d_e) + sqrt(8 log(16 / delta)))^2
    """
    _check_tail(delta, d_e)
    return float((np.sqrt(d_e) + np.sqrt(8.0 * np.log(16.0 / delta))) ** 2)

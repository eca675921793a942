"""Monte Carlo checks of the concentration claims behind the solvers.

Each harness redraws embeddings (or sign patterns) under child seeds,
measures the relevant deviation, and reports the empirical success
fraction plus deviation quantiles. All of these form dense d x d or n x d
intermediates and are meant for desk-scale problems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import SketchSpec, derive_seed, sketch
from .errors import InvalidProbability, NotPowerOfTwo
from .linalg import fwht, is_power_of_two, sym_eig
from .preconditioner import build, cs_deviation
from .problem import RegularizedProblem, _spectrum, effective_dimension

__all__ = [
    "ConcentrationReport",
    "estimate_event_probability",
    "gaussian_deviation_check",
    "srht_rownorm_check",
    "gaussian_width_mc",
]

_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass
class ConcentrationReport:
    family: str
    m: int
    rho: float | None
    delta: float | None
    trials: int
    success: float
    quantiles: list[tuple[float, float]]

    def as_dict(self) -> dict:
        return {
            "family": self.family,
            "m": self.m,
            "rho": self.rho,
            "delta": self.delta,
            "trials": self.trials,
            "success": self.success,
            "quantiles": [[q, v] for q, v in self.quantiles],
        }


def _check_trials(trials: int) -> None:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")


def _quantiles(values: np.ndarray) -> list[tuple[float, float]]:
    return [(q, float(np.quantile(values, q))) for q in _QUANTILES]


def _hinvsqrt(p: RegularizedProblem) -> np.ndarray:
    w, V = sym_eig(p.hessian())
    return (V / np.sqrt(w)[None, :]) @ V.T


def estimate_event_probability(
    p: RegularizedProblem,
    family: str,
    m: int,
    rho: float,
    trials: int,
    seed: int,
    s: int = 1,
) -> ConcentrationReport:
    """Fraction of embeddings with ||C_S - I||_2 <= max(sqrt(rho), rho)."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    _check_trials(trials)
    thresh = max(np.sqrt(rho), rho)
    hi = _hinvsqrt(p)
    devs = np.empty(trials)
    for k in range(trials):
        sk = sketch(p.A, SketchSpec(family, m, derive_seed(seed, k), s=s))
        lmax, lmin = cs_deviation(build(sk, p.nu, p.lam), p, hinvsqrt=hi)
        devs[k] = max(abs(lmax), abs(lmin))
    return ConcentrationReport(
        family=family,
        m=m,
        rho=rho,
        delta=None,
        trials=trials,
        success=float(np.mean(devs <= thresh)),
        quantiles=_quantiles(devs),
    )


def gaussian_deviation_check(
    p: RegularizedProblem,
    m: int,
    trials: int,
    delta: float,
    rho: float,
    seed: int,
) -> ConcentrationReport:
    """Check the one-sided Gaussian deviation bounds

        lambda_max(C_S - I) <= ||D||_2^2 (2 sqrt(rho) + rho)
        lambda_min(C_S - I) >= -||D||_2^2 max(2 sqrt(rho) - rho, rho)

    which hold with probability 1 - delta once m >= m_delta / rho.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidProbability(f"delta must lie in (0, 1), got {delta}")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    _check_trials(trials)
    w = _spectrum(p.A, p.lam)
    normD2 = float((w / (w + p.nu**2)).max())
    up = normD2 * (2.0 * np.sqrt(rho) + rho)
    down = normD2 * max(2.0 * np.sqrt(rho) - rho, rho)
    hi = _hinvsqrt(p)
    devs = np.empty(trials)
    hits = 0
    for k in range(trials):
        sk = sketch(p.A, SketchSpec("gaussian", m, derive_seed(seed, k)))
        lmax, lmin = cs_deviation(build(sk, p.nu, p.lam), p, hinvsqrt=hi)
        devs[k] = max(abs(lmax), abs(lmin))
        hits += int(lmax <= up and lmin >= -down)
    return ConcentrationReport(
        family="gaussian",
        m=m,
        rho=rho,
        delta=delta,
        trials=trials,
        success=hits / trials,
        quantiles=_quantiles(devs),
    )


def srht_rownorm_check(
    p: RegularizedProblem,
    trials: int,
    delta: float,
    seed: int,
) -> ConcentrationReport:
    """Row-norm flattening behind the SRHT bound: over sign draws eps,
    success means

        max_j ||e_j.T H diag(eps) U Dbar|| < sqrt(d_e/n) + sqrt(8 log(n/delta)/n)

    with U Dbar the left factor of A H^-1/2 normalized by its top singular
    value. Requires n a power of two, desk scale (n <= 4096).
    """
    if not (0.0 < delta < 1.0):
        raise InvalidProbability(f"delta must lie in (0, 1), got {delta}")
    _check_trials(trials)
    n = p.n
    if not is_power_of_two(n):
        raise NotPowerOfTwo(f"n = {n} must be a power of two")
    if n > 4096:
        raise ValueError(f"n = {n} beyond desk scale (max 4096)")
    G = p.A @ _hinvsqrt(p)
    w = _spectrum(p.A, p.lam)
    normD = np.sqrt((w / (w + p.nu**2)).max())
    G /= normD
    d_e = effective_dimension(p)
    bound = np.sqrt(d_e / n) + np.sqrt(8.0 * np.log(n / delta) / n)
    rng_master = np.random.default_rng  # one child generator per trial
    stats = np.empty(trials)
    for k in range(trials):
        rng = rng_master(derive_seed(seed, k))
        signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
        M = fwht(G * signs[:, None], normalized=True)
        stats[k] = float(np.sqrt((M * M).sum(axis=1)).max())
    return ConcentrationReport(
        family="srht",
        m=0,
        rho=None,
        delta=delta,
        trials=trials,
        success=float(np.mean(stats < bound)),
        quantiles=_quantiles(stats),
    )


def gaussian_width_mc(radii: np.ndarray, n_samples: int, seed: int) -> float:
    """Monte Carlo Gaussian width of the ellipsoid with axes `radii`:
    mean over h ~ N(0, I) of ||radii.T h||_2."""
    _check_trials(n_samples)
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim != 2:
        raise ValueError(f"radii must be a matrix, got shape {radii.shape}")
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((n_samples, radii.shape[0]))
    return float(np.sqrt(((H @ radii) ** 2).sum(axis=1)).mean())

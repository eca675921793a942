"""Iterative solvers: CG, sketched Newton (IHS), preconditioned CG, the
heavy-ball variant, and the adaptive sketch-size driver.

All iterations act on the quadratic f(x) = (1/2)<x, H x> - <b, x>. The
exact error is delta_t = (1/2)||x_t - x*||_H^2 and the computable surrogate
is the approximate Newton decrement
delta_tilde_t = (1/2) grad.T H_S^-1 grad. Multi-column right-hand sides run
columnwise; recorded delta quantities are summed over columns.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .embeddings import SketchSpec, derive_seed, padded_rows, sketch
from .errors import BreakdownDetected, NegativeValue
from .preconditioner import Preconditioner, approx_newton_decrement, build
from .problem import ExactSolution, RegularizedProblem, exact_error

__all__ = [
    "TraceRecord",
    "SolverTrace",
    "AdaptiveConfig",
    "IllConditionedBasis",
    "cg",
    "ihs_step",
    "ihs_run",
    "pcg_run",
    "polyak_coefficients",
    "polyak_ihs_run",
    "heavy_ball_bound",
    "krylov_lower_bound",
    "adaptive_run",
    "termination_check",
]

# Relative floor (vs delta_tilde at t = 0) below which an iterate counts as
# converged to working precision; the adaptive test is skipped there so
# roundoff noise cannot trigger spurious resketches.
_CONVERGED_REL = 1e-26


class IllConditionedBasis(UserWarning):
    """Krylov bound basis exceeded the conditioning threshold; a
    higher-precision fallback was used."""


@dataclass
class TraceRecord:
    t: int
    m: int
    k: int
    delta_tilde: float
    delta_exact: float | None
    wall_seconds: float
    event: str  # "plain" | "accepted" | "resketch"


@dataclass
class SolverTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def resketch_count(self) -> int:
        return self.final.k if self.records else 0

    def delta_exact_series(self) -> list[float]:
        return [r.delta_exact for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def _promote(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[:, None].copy(), True
    return x.copy(), False


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def read(self) -> float:
        return time.perf_counter() - self.t0


def _record(trace, clock, p, sol, t, m, k, dt, x, event):
    de = exact_error(p, x, sol) if sol is not None else None
    trace.append(TraceRecord(t, m, k, float(dt), de, clock.read(), event))


def cg(
    p: RegularizedProblem,
    x0: np.ndarray,
    T: int,
    tol: float = 0.0,
    sol: ExactSolution | None = None,
) -> tuple[np.ndarray, SolverTrace]:
    """Conjugate gradient on H x = b, columnwise.

    The trace's delta_tilde column holds (1/2)||r||_F^2 (the decrement with
    identity preconditioner). Stops after T iterations or once that value
    falls to tol.
    """
    clock = _Clock()
    x, vec = _promote(x0)
    trace = SolverTrace()
    r = p.B - p.hess_mult(x)
    q = r.copy()
    rs = np.sum(r * r, axis=0)
    _record(trace, clock, p, sol, 0, 0, 0, 0.5 * rs.sum(), x, "plain")
    for t in range(1, T + 1):
        active = rs > 0.0
        if not active.any() or 0.5 * rs.sum() <= tol:
            break
        Hq = p.hess_mult(q)
        qHq = np.sum(q * Hq, axis=0)
        if np.any(active & (qHq <= 0.0)):
            raise BreakdownDetected("direction with nonpositive curvature")
        alpha = np.where(active, rs / np.where(qHq > 0, qHq, 1.0), 0.0)
        x += q * alpha
        r -= Hq * alpha
        rs_new = np.sum(r * r, axis=0)
        beta = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        q = r + q * beta
        rs = rs_new
        _record(trace, clock, p, sol, t, 0, 0, 0.5 * rs.sum(), x, "plain")
    return (x[:, 0] if vec else x), trace


def ihs_step(
    p: RegularizedProblem, P: Preconditioner, x: np.ndarray, mu: float
) -> np.ndarray:
    """One sketched Newton update x - mu H_S^-1 grad f(x)."""
    x, vec = _promote(x)
    out = x - mu * P.solve(p.gradient(x))
    return out[:, 0] if vec else out


def _fixed_sketch_setup(p, m, family, seed, s):
    sk = sketch(p.A, SketchSpec(family, m, seed, s=s))
    return build(sk, p.nu, p.lam)


def ihs_run(
    p: RegularizedProblem,
    x0: np.ndarray,
    m: int,
    rho: float,
    family: str,
    seed: int,
    T: int,
    sol: ExactSolution | None = None,
    s: int = 1,
) -> tuple[np.ndarray, SolverTrace]:
    """Sketch once, then iterate x_{t+1} = x_t - (1 - rho) H_S^-1 grad.

    On the event ||C_S - I||_2 <= sqrt(rho) the exact error contracts by
    rho per step.
    """
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    clock = _Clock()
    P = _fixed_sketch_setup(p, m, family, seed, s)
    mu = 1.0 - rho
    x, vec = _promote(x0)
    trace = SolverTrace()
    g = p.gradient(x)
    v = P.solve(g)
    dt = 0.5 * float(np.sum(g * v))
    _record(trace, clock, p, sol, 0, m, 0, dt, x, "plain")
    for t in range(1, T + 1):
        x -= mu * v
        g = p.gradient(x)
        v = P.solve(g)
        dt = 0.5 * float(np.sum(g * v))
        _record(trace, clock, p, sol, t, m, 0, dt, x, "plain")
    return (x[:, 0] if vec else x), trace


def pcg_run(
    p: RegularizedProblem,
    x0: np.ndarray,
    m: int,
    family: str,
    seed: int,
    T: int,
    tol: float = 0.0,
    sol: ExactSolution | None = None,
    s: int = 1,
) -> tuple[np.ndarray, SolverTrace]:
    """Preconditioned CG with a single sketched-Hessian preconditioner.

    Maintains r_t = b - H x_t, solves H_S r_tilde = r, and records
    r.T r_tilde / 2, which equals the approximate Newton decrement at x_t.
    After t iterations the iterate is optimal over the Krylov space, so the
    recorded exact error meets krylov_lower_bound.
    """
    clock = _Clock()
    P = _fixed_sketch_setup(p, m, family, seed, s)
    x, vec = _promote(x0)
    trace = SolverTrace()
    state = _PcgState(p, P, x)
    _record(trace, clock, p, sol, 0, m, 0, state.delta_tilde, state.x, "plain")
    for t in range(1, T + 1):
        if state.done() or (tol > 0.0 and state.delta_tilde <= tol):
            break
        dt_new, stash = state.propose()
        state.commit(dt_new, stash)
        _record(trace, clock, p, sol, t, m, 0, state.delta_tilde, state.x, "plain")
    x = state.x
    return (x[:, 0] if vec else x), trace


class _PcgState:
    """Columnwise PCG recursion shared by the fixed and adaptive drivers.

    Each column carries its own step and direction scalars; dt_col holds
    r.T r_tilde per column (twice the per-column decrement). Converged
    columns (dt_col = 0) freeze while the rest keep iterating.
    """

    method = "pcg"

    def __init__(self, p: RegularizedProblem, P: Preconditioner, x: np.ndarray,
                 rho: float | None = None):
        self.p = p
        self.x = x.copy()
        self.restart(P)

    def restart(self, P: Preconditioner) -> None:
        self.P = P
        self.r = self.p.B - self.p.hess_mult(self.x)
        self.rt = P.solve(self.r)
        self.dt_col = self._scalars(self.r, self.rt)
        self.pdir = self.rt.copy()

    def _scalars(self, r, rt) -> np.ndarray:
        dt = np.sum(r * rt, axis=0)
        floor = -1e-12 * np.sum(r * r, axis=0)
        if np.any(dt < floor):
            raise NegativeValue("r.T H_S^-1 r went negative beyond roundoff")
        return np.maximum(dt, 0.0)

    @property
    def delta_tilde(self) -> float:
        return 0.5 * float(self.dt_col.sum())

    def done(self) -> bool:
        return not np.any(self.dt_col > 0.0)

    def propose(self):
        active = self.dt_col > 0.0
        Hp = self.p.hess_mult(self.pdir)
        pHp = np.sum(self.pdir * Hp, axis=0)
        if np.any(active & (pHp <= 0.0)):
            raise BreakdownDetected("direction with nonpositive curvature")
        alpha = np.where(active, self.dt_col / np.where(pHp > 0, pHp, 1.0), 0.0)
        x_new = self.x + self.pdir * alpha
        r_new = self.r - Hp * alpha
        rt_new = self.P.solve(r_new)
        dt_new = self._scalars(r_new, rt_new)
        return 0.5 * float(dt_new.sum()), (x_new, r_new, rt_new, dt_new)

    def commit(self, dt_scalar, stash) -> None:
        x_new, r_new, rt_new, dt_new = stash
        old = self.dt_col
        ratio = np.where(old > 0, dt_new / np.where(old > 0, old, 1.0), 0.0)
        self.pdir = rt_new + self.pdir * ratio
        self.x, self.r, self.rt, self.dt_col = x_new, r_new, rt_new, dt_new


def polyak_coefficients(rho: float) -> tuple[float, float]:
    """Heavy-ball step and momentum (mu_rho, beta_rho) tuned to rho."""
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    root = np.sqrt(1.0 - rho)
    return 2.0 * (1.0 - rho) / (1.0 + root), (1.0 - root) / (1.0 + root)


def polyak_ihs_run(
    p: RegularizedProblem,
    x0: np.ndarray,
    m: int,
    rho: float,
    family: str,
    seed: int,
    T: int,
    sol: ExactSolution | None = None,
    s: int = 1,
) -> tuple[np.ndarray, SolverTrace]:
    """Sketched Newton with heavy-ball momentum:

        x_{t+1} = x_t - mu_rho H_S^-1 grad f(x_t) + beta_rho (x_t - x_{t-1})

    with x_{-1} = x_0. Asymptotic rate beta_rho; heavy_ball_bound gives the
    finite-t envelope.
    """
    mu, beta = polyak_coefficients(rho)
    clock = _Clock()
    P = _fixed_sketch_setup(p, m, family, seed, s)
    x, vec = _promote(x0)
    x_prev = x.copy()
    trace = SolverTrace()
    g = p.gradient(x)
    v = P.solve(g)
    dt = 0.5 * float(np.sum(g * v))
    _record(trace, clock, p, sol, 0, m, 0, dt, x, "plain")
    for t in range(1, T + 1):
        x_new = x - mu * v + beta * (x - x_prev)
        x_prev, x = x, x_new
        g = p.gradient(x)
        v = P.solve(g)
        dt = 0.5 * float(np.sum(g * v))
        _record(trace, clock, p, sol, t, m, 0, dt, x, "plain")
    return (x[:, 0] if vec else x), trace


def heavy_ball_bound(t, rho: float) -> float:
    """Per-iteration envelope (alpha(t, rho) beta_rho^omega(t))^(1/t) for the
    heavy-ball error ratio, evaluated in log space:

        nu(t)    = log2(t) + 1
        omega(t) = t - 2 nu(t)
        alpha    = 3^(nu (nu + 1)) (1 + 4 beta + beta^2)^(2 nu)

    t = inf returns the asymptotic rate beta_rho.
    """
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    _, beta = polyak_coefficients(rho)
    if np.isinf(t):
        return float(beta)
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    nu_t = np.log2(t) + 1.0
    omega = t - 2.0 * nu_t
    logv = (
        nu_t * (nu_t + 1.0) * np.log(3.0)
        + 2.0 * nu_t * np.log1p(4.0 * beta + beta * beta)
        + omega * np.log(beta)
    )
    return float(np.exp(logv / t))


def _solve_longdouble(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting in extended precision."""
    G = G.astype(np.longdouble).copy()
    rhs = rhs.astype(np.longdouble).copy()
    k = G.shape[0]
    for i in range(k):
        piv = i + int(np.argmax(np.abs(G[i:, i])))
        if G[piv, i] == 0:
            continue
        if piv != i:
            G[[i, piv]] = G[[piv, i]]
            rhs[[i, piv]] = rhs[[piv, i]]
        factors = G[i + 1:, i] / G[i, i]
        G[i + 1:] -= factors[:, None] * G[i]
        rhs[i + 1:] -= factors * rhs[i]
    out = np.zeros(k, dtype=np.longdouble)
    for i in range(k - 1, -1, -1):
        if G[i, i] == 0:
            continue
        out[i] = (rhs[i] - G[i, i + 1:] @ out[i + 1:]) / G[i, i]
    return out


def _poly_floor(theta: np.ndarray, xi: np.ndarray, t: int) -> float:
    """min over degree-t polynomials with Q(0) = 1 of
    (1/2) sum_i xi_i^2 Q(theta_i)^2."""
    if t == 0:
        return 0.5 * float(xi @ xi)
    Vmat = theta[:, None] ** np.arange(1, t + 1)
    Wv = xi[:, None] * Vmat
    scale = np.abs(Wv).max(axis=0)
    scale[scale == 0] = 1.0
    Wvs = Wv / scale
    if np.linalg.cond(Wvs) > 1e12:
        warnings.warn(
            "Krylov bound basis is ill-conditioned; using extended-precision "
            "normal equations",
            IllConditionedBasis,
        )
        Wl = Wvs.astype(np.longdouble)
        a = _solve_longdouble(Wl.T @ Wl, -(Wl.T @ xi.astype(np.longdouble)))
        resid = xi.astype(np.longdouble) + Wl @ a
        return 0.5 * float(resid @ resid)
    a, *_ = np.linalg.lstsq(Wvs, -xi, rcond=None)
    resid = xi + Wvs @ a
    return 0.5 * float(resid @ resid)


def krylov_lower_bound(
    p: RegularizedProblem,
    P: Preconditioner,
    x0: np.ndarray,
    t: int,
    sol: ExactSolution,
) -> float:
    """Best exact error any degree-t Krylov-space method started at x0 can
    reach with preconditioner H_S, summed over columns:

        (1/2) min_{Q_t(0)=1} sum_i Q_t(1/lambda_i)^2 xi_i^2

    with (lambda_i, v_i) the eigenpairs of C_S = H^-1/2 H_S H^-1/2 and
    xi_i = <v_i, H^1/2 (x0 - x*)>. Desk-scale d (dense eigendecomposition).
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    from .linalg import sym_eig  # local import keeps module load light

    w, V = sym_eig(p.hessian())
    if w[-1] <= 0:
        raise NegativeValue("H must be positive definite")
    Hsqrt = (V * np.sqrt(w)[None, :]) @ V.T
    Hinvsqrt = (V / np.sqrt(w)[None, :]) @ V.T
    C = Hinvsqrt @ P.sketched_hessian() @ Hinvsqrt
    lam_c, U = sym_eig(C)
    if lam_c[-1] <= 0:
        raise NegativeValue("C_S must be positive definite")
    theta = 1.0 / lam_c
    x0m, _ = _promote(x0)
    xi = U.T @ (Hsqrt @ (x0m - sol.x_star))
    return float(sum(_poly_floor(theta, xi[:, j], t) for j in range(xi.shape[1])))


def termination_check(delta_tilde: float, eps: float, m_delta: float) -> bool:
    """True when delta_tilde <= eps / (m_delta + 1), which certifies exact
    error at most eps on the concentration event."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if m_delta < 0:
        raise ValueError(f"m_delta must be >= 0, got {m_delta}")
    return bool(delta_tilde <= eps / (m_delta + 1.0))


_METHODS = ("ihs", "pcg", "polyak")


def _method_constants(method: str, rho: float) -> tuple[float, float]:
    """(alpha, phi(rho)) for the adaptive acceptance threshold."""
    if method == "ihs":
        return 1.0, rho
    if method == "pcg":
        root = np.sqrt(1.0 - rho)
        return 4.0, (1.0 - root) / (1.0 + root)
    if method == "polyak":
        return 1.0, polyak_coefficients(rho)[1]
    raise ValueError(f"unknown method {method!r}; expected one of {_METHODS}")


@dataclass
class AdaptiveConfig:
    """Knobs for adaptive_run. Build with for_method so that (alpha,
    phi_rho, c_alpha_rho) stay consistent with the solver choice."""

    rho: float
    m_init: int
    T: int
    family: str
    seed: int
    alpha: float
    phi_rho: float
    c_alpha_rho: float
    s: int = 1

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.m_init < 1:
            raise ValueError(f"m_init must be >= 1, got {self.m_init}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        sq = np.sqrt(self.rho)
        expected_c = (1.0 + sq) / (1.0 - sq) * self.alpha
        if abs(self.c_alpha_rho - expected_c) > 1e-12 * max(1.0, abs(expected_c)):
            raise ValueError(
                f"c_alpha_rho = {self.c_alpha_rho} inconsistent with alpha = "
                f"{self.alpha} and rho = {self.rho} (expected {expected_c})"
            )
        if self.rho >= 0.25:
            warnings.warn(
                f"rho = {self.rho} is outside the guaranteed range (0, 1/4); "
                "the adaptive bounds may not hold",
                UserWarning,
            )

    @property
    def rho_in_guarantee_range(self) -> bool:
        return self.rho < 0.25

    @classmethod
    def for_method(
        cls,
        method: str,
        rho: float,
        m_init: int,
        T: int,
        family: str,
        seed: int,
        s: int = 1,
    ) -> "AdaptiveConfig":
        alpha, phi = _method_constants(method, rho)
        sq = np.sqrt(rho)
        c = (1.0 + sq) / (1.0 - sq) * alpha
        return cls(rho, m_init, T, family, seed, alpha, phi, c, s=s)


class _IhsState:
    method = "ihs"

    def __init__(self, p, P, x, rho):
        self.p = p
        self.mu = 1.0 - rho
        self.x = x
        self.restart(P)

    def restart(self, P):
        self.P = P
        self.g = self.p.gradient(self.x)
        self.v = P.solve(self.g)
        self.delta_tilde = 0.5 * float(np.sum(self.g * self.v))

    def propose(self):
        x_new = self.x - self.mu * self.v
        g_new = self.p.gradient(x_new)
        v_new = self.P.solve(g_new)
        dt_new = 0.5 * float(np.sum(g_new * v_new))
        return dt_new, (x_new, g_new, v_new)

    def commit(self, dt_new, stash):
        self.x, self.g, self.v = stash
        self.delta_tilde = dt_new


class _PolyakState(_IhsState):
    method = "polyak"

    def __init__(self, p, P, x, rho):
        self.beta = polyak_coefficients(rho)[1]
        super().__init__(p, P, x, rho)
        self.mu = polyak_coefficients(rho)[0]

    def restart(self, P):
        super().restart(P)
        self.x_prev = self.x.copy()  # momentum resets with the sketch

    def propose(self):
        x_new = self.x - self.mu * self.v + self.beta * (self.x - self.x_prev)
        g_new = self.p.gradient(x_new)
        v_new = self.P.solve(g_new)
        dt_new = 0.5 * float(np.sum(g_new * v_new))
        return dt_new, (x_new, g_new, v_new)

    def commit(self, dt_new, stash):
        self.x_prev = self.x
        self.x, self.g, self.v = stash
        self.delta_tilde = dt_new


def _segment_threshold(cfg: AdaptiveConfig, method: str, ell: int) -> float:
    """Acceptance threshold on delta_tilde_{t+1} / delta_tilde_I for a
    segment of ell accepted steps since the last resketch."""
    if method == "polyak":
        sq = np.sqrt(cfg.rho)
        c_geom = (1.0 + sq) / (1.0 - sq)
        # heavy_ball_bound returns (alpha beta^omega)^(1/ell)
        return c_geom * heavy_ball_bound(ell, cfg.rho) ** ell
    return cfg.c_alpha_rho * cfg.phi_rho**ell


def adaptive_run(
    p: RegularizedProblem,
    x0: np.ndarray,
    cfg: AdaptiveConfig,
    method: str = "pcg",
    sol: ExactSolution | None = None,
    experimental: bool = False,
) -> tuple[np.ndarray, SolverTrace]:
    """Run a sketched method with on-line sketch-size adaptation.

    After each candidate step the measured decrement ratio
    delta_tilde+ / delta_tilde_I is compared with the certified envelope
    c(alpha, rho) phi(rho)^(t + 1 - I), where I is the iteration of the
    last resketch. A violation rejects the step, doubles m, draws a fresh
    embedding (child seed), rebuilds the preconditioner, and restarts the
    method state at the current iterate; t does not advance. Otherwise the
    step is accepted. Runs until T accepted iterations.

    m is clamped at the row count (padded row count for SRHT); if the test
    still fails twice in a row at that cap the step is accepted to
    guarantee progress. method = "polyak" is experimental and must be
    enabled explicitly; its threshold uses the finite-t heavy-ball envelope
    at the segment length.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {_METHODS}")
    if method == "polyak" and not experimental:
        raise ValueError("method 'polyak' is experimental; pass experimental=True")
    clock = _Clock()
    x, vec = _promote(x0)
    cap = padded_rows(p.n) if cfg.family == "srht" else p.n
    m = min(cfg.m_init, cap)
    K = 0
    sk = sketch(p.A, SketchSpec(cfg.family, m, derive_seed(cfg.seed, 0), s=cfg.s))
    P = build(sk, p.nu, p.lam)
    state = {"ihs": _IhsState, "pcg": _PcgState, "polyak": _PolyakState}[method](
        p, P, x, cfg.rho
    )
    trace = SolverTrace()
    dt_first = state.delta_tilde
    dt_I = state.delta_tilde
    t = 0
    I = 0
    capped_retry = False
    _record(trace, clock, p, sol, 0, m, 0, state.delta_tilde, state.x, "plain")
    while t < cfg.T:
        dt_new, stash = state.propose()
        ell = t + 1 - I
        threshold = _segment_threshold(cfg, method, ell)
        converged = dt_I <= 0.0 or dt_new <= _CONVERGED_REL * dt_first
        reject = (not converged) and dt_new > threshold * dt_I
        if reject and capped_retry:
            reject = False  # m already at cap and one redraw failed: accept
        if reject:
            K += 1
            at_cap = m >= cap
            m = min(2 * m, cap)
            capped_retry = at_cap
            sk = sketch(
                p.A, SketchSpec(cfg.family, m, derive_seed(cfg.seed, K), s=cfg.s)
            )
            P = build(sk, p.nu, p.lam)
            state.restart(P)
            dt_I = state.delta_tilde
            I = t
            _record(trace, clock, p, sol, t, m, K, dt_I, state.x, "resketch")
        else:
            state.commit(dt_new, stash)
            t += 1
            capped_retry = False
            _record(
                trace, clock, p, sol, t, m, K, state.delta_tilde, state.x, "accepted"
            )
    out = state.x
    return (out[:, 0] if vec else out), trace

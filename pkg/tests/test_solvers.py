"""Solver loops: CG, sketched Newton variants, rate envelopes, adaptation."""
import warnings

import numpy as np
import pytest

from adasketch.embeddings import SketchSpec, sketch
from adasketch.preconditioner import build
from adasketch.problem import (
    RegularizedProblem,
    direct_solve,
    exact_error,
    gen_synthetic,
    nu_for_target_dimension,
)
from adasketch.solvers import (
    AdaptiveConfig,
    IllConditionedBasis,
    adaptive_run,
    cg,
    heavy_ball_bound,
    ihs_run,
    ihs_step,
    krylov_lower_bound,
    pcg_run,
    polyak_coefficients,
    polyak_ihs_run,
    termination_check,
)


def small_problem(seed=50, n=64, d=8, decay=0.7, nu=0.5, c=1):
    return gen_synthetic(n, d, decay=decay, nu=nu, seed=seed, c=c)


# ---------------------------------------------------------------- plain CG


def test_cg_one_step_on_scaled_identity():
    # H = nu^2 I: a single step lands on the minimizer
    p = RegularizedProblem(A=np.zeros((4, 3)), B=np.array([2.0, -4.0, 6.0]), nu=2.0)
    x, trace = cg(p, np.zeros(3), T=5)
    assert np.allclose(x, p.B[:, 0] / 4.0)
    assert trace.final.t <= 1


def test_cg_finite_termination_and_monotone_error():
    p, sol = small_problem(51)
    x, trace = cg(p, np.zeros((p.d, p.c)), T=p.d, sol=sol)
    errs = trace.delta_exact_series()
    assert errs[-1] <= 1e-16 * errs[0]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))
    assert np.allclose(x, direct_solve(p).x_star, atol=1e-7)


def test_cg_tol_stops_early():
    p, _ = small_problem(52)
    _, trace = cg(p, np.zeros((p.d, p.c)), T=100, tol=1e-6)
    assert trace.final.delta_tilde <= 1e-6
    assert trace.final.t < 100


def test_cg_multi_column():
    p, sol = small_problem(53, c=3)
    x, _ = cg(p, np.zeros((p.d, 3)), T=p.d + 2, sol=sol)
    assert np.allclose(x, sol.x_star, atol=1e-7)


# ------------------------------------------------------- IHS fixed sketch


def test_ihs_step_fixed_point():
    p, sol = small_problem(54)
    P = build(sketch(p.A, SketchSpec("gaussian", 32, seed=1)), p.nu, p.lam)
    out = ihs_step(p, P, sol.x_star, mu=0.75)
    assert np.allclose(out, sol.x_star, atol=1e-12)


def test_ihs_exact_contraction_when_sketch_is_noiseless():
    # A = 0 makes H_S = H, so the error vector scales by exactly rho
    p = RegularizedProblem(A=np.zeros((6, 4)), B=np.arange(1.0, 5.0), nu=1.5)
    sol = direct_solve(p)
    rho = 0.3
    x, trace = ihs_run(p, np.zeros(4), m=3, rho=rho, family="gaussian",
                       seed=2, T=4, sol=sol)
    assert np.allclose(x - sol.x_star[:, 0], -(rho**4) * sol.x_star[:, 0])
    errs = trace.delta_exact_series()
    for a, b in zip(errs, errs[1:]):
        assert np.isclose(b, rho**2 * a, rtol=1e-10)


def test_ihs_run_validates_rho():
    p, _ = small_problem(55)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            ihs_run(p, np.zeros((p.d, 1)), m=16, rho=bad, family="gaussian",
                    seed=0, T=2)


def test_ihs_trace_shape_and_metadata():
    p, sol = small_problem(56)
    _, trace = ihs_run(p, np.zeros((p.d, 1)), m=24, rho=0.25,
                       family="gaussian", seed=3, T=6, sol=sol)
    assert len(trace) == 7
    assert [r.t for r in trace.records] == list(range(7))
    assert all(r.m == 24 and r.k == 0 for r in trace.records)
    assert trace.resketch_count == 0


# ----------------------------------------------------------- PCG variants


def test_pcg_perfect_preconditioner_converges_immediately():
    # m = n = n_padded SRHT reproduces the Gram matrix exactly: H_S = H
    p, sol = gen_synthetic(64, 6, decay=0.8, nu=0.7, seed=57)
    x, trace = pcg_run(p, np.zeros((p.d, 1)), m=64, family="srht", seed=4,
                       T=8, sol=sol)
    assert trace.delta_exact_series()[1] <= 1e-20 * trace.delta_exact_series()[0]


def test_pcg_decrement_column_is_newton_decrement():
    p, sol = small_problem(58)
    m = 32
    _, trace = pcg_run(p, np.zeros((p.d, 1)), m=m, family="gaussian", seed=5,
                       T=3, sol=sol)
    P = build(sketch(p.A, SketchSpec("gaussian", m, seed=5)), p.nu, p.lam)
    g = p.gradient(np.zeros((p.d, 1)))
    dt0 = 0.5 * float(np.sum(g * P.solve(g)))
    assert np.isclose(trace.records[0].delta_tilde, dt0, rtol=1e-12)


def test_pcg_matches_krylov_floor_spot():
    p, sol = small_problem(59, d=5)
    m = 12
    x0 = np.zeros((p.d, 1))
    _, trace = pcg_run(p, x0, m=m, family="gaussian", seed=6, T=5, sol=sol)
    P = build(sketch(p.A, SketchSpec("gaussian", m, seed=6)), p.nu, p.lam)
    errs = trace.delta_exact_series()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedBasis)
        for t in range(len(errs)):
            floor = krylov_lower_bound(p, P, x0, t, sol)
            assert errs[t] <= floor * (1 + 1e-8) + 1e-12 * errs[0]
            assert errs[t] >= floor * (1 - 1e-6) - 1e-12 * errs[0]


def test_pcg_tol_stops_early():
    p, _ = small_problem(60)
    _, trace = pcg_run(p, np.zeros((p.d, 1)), m=48, family="gaussian", seed=7,
                       T=50, tol=1e-10)
    assert trace.final.delta_tilde <= 1e-10
    assert trace.final.t < 50


# ------------------------------------------------------------ heavy ball


def test_polyak_coefficients_values():
    mu, beta = polyak_coefficients(0.1)
    assert np.isclose(beta, 0.026334038989724026, atol=1e-12)
    assert np.isclose(mu, 0.9237006350907516, atol=1e-12)
    root = np.sqrt(1.0 - 0.37)
    mu2, beta2 = polyak_coefficients(0.37)
    assert np.isclose(mu2, 2.0 * 0.63 / (1.0 + root))
    assert np.isclose(beta2, (1.0 - root) / (1.0 + root))
    with pytest.raises(ValueError):
        polyak_coefficients(1.0)


def test_heavy_ball_bound_spot_values():
    assert np.isclose(heavy_ball_bound(100, 0.1), 0.09636528063949724, rtol=1e-12)
    assert np.isclose(heavy_ball_bound(300, 0.01), 0.005134283988269949, rtol=1e-12)


def test_heavy_ball_bound_limits():
    for rho in (0.1, 0.05, 0.01, 0.001):
        beta = polyak_coefficients(rho)[1]
        assert heavy_ball_bound(np.inf, rho) == pytest.approx(beta, rel=1e-12)
        # envelope approaches the asymptotic rate from above
        assert heavy_ball_bound(2000, rho) > beta
        assert abs(heavy_ball_bound(200000, rho) / beta - 1.0) < 0.05
    with pytest.raises(ValueError):
        heavy_ball_bound(0, 0.1)
    # log-space evaluation stays finite where naive products overflow
    assert np.isfinite(heavy_ball_bound(1000, 0.001))


def test_polyak_run_contracts_at_momentum_rate():
    # measure the per-step ratio on a pre-floor window of a certified run
    p, sol = gen_synthetic(256, 16, decay=0.8, nu=0.5, seed=11)
    from adasketch.preconditioner import cs_deviation
    rho = 0.6
    m = 224
    P = build(sketch(p.A, SketchSpec("gaussian", m, seed=8)), p.nu, p.lam)
    up, down = cs_deviation(P, p)
    assert max(abs(up), abs(down)) <= np.sqrt(rho)  # draw is certified
    _, trace = polyak_ihs_run(p, np.zeros((p.d, 1)), m=m, rho=rho,
                              family="gaussian", seed=8, T=20, sol=sol)
    errs = trace.delta_exact_series()
    beta = polyak_coefficients(rho)[1]
    window_rate = (errs[16] / errs[6]) ** 0.1
    assert window_rate <= 1.5 * beta


def test_polyak_first_step_matches_plain_newton_with_mu():
    # x_prev starts at x0, so step one has no momentum term
    p, sol = small_problem(61)
    m = 40
    mu = polyak_coefficients(0.2)[0]
    P = build(sketch(p.A, SketchSpec("gaussian", m, seed=9)), p.nu, p.lam)
    x0 = np.zeros((p.d, 1))
    expect = ihs_step(p, P, x0, mu=mu)
    _, trace = polyak_ihs_run(p, x0, m=m, rho=0.2, family="gaussian", seed=9,
                              T=1, sol=sol)
    direct = exact_error(p, expect, sol)
    assert np.isclose(trace.delta_exact_series()[1], direct, rtol=1e-10)


# ------------------------------------------------------------ Krylov floor


def test_krylov_floor_boundary_cases():
    p, sol = small_problem(62, d=6)
    P = build(sketch(p.A, SketchSpec("gaussian", 20, seed=10)), p.nu, p.lam)
    x0 = np.random.default_rng(0).standard_normal((p.d, 1))
    d0 = exact_error(p, x0, sol)
    assert np.isclose(krylov_lower_bound(p, P, x0, 0, sol), d0, rtol=1e-10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedBasis)
        vals = [krylov_lower_bound(p, P, x0, t, sol) for t in range(p.d + 1)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(vals, vals[1:]))
    assert vals[p.d] <= 1e-16 * d0  # a degree-d polynomial hits every eigenvalue
    with pytest.raises(ValueError):
        krylov_lower_bound(p, P, x0, -1, sol)


def test_krylov_floor_warns_on_ill_conditioned_basis():
    # a tiny sketch spreads the eigenvalues of C_S over many decades, so
    # the power basis of the degree-10 fit is numerically rank deficient
    p, sol = small_problem(5, d=10)
    P = build(sketch(p.A, SketchSpec("gaussian", 2, seed=11)), p.nu, p.lam)
    x0 = np.zeros((p.d, 1))
    with pytest.warns(IllConditionedBasis):
        krylov_lower_bound(p, P, x0, 10, sol)


# ------------------------------------------------------------ termination


def test_termination_threshold():
    assert termination_check(0.001, eps=0.01, m_delta=9.0)
    assert not termination_check(0.0011, eps=0.01, m_delta=9.0)
    assert termination_check(0.01, eps=0.01, m_delta=0.0)
    with pytest.raises(ValueError):
        termination_check(0.1, eps=0.0, m_delta=1.0)
    with pytest.raises(ValueError):
        termination_check(0.1, eps=0.1, m_delta=-1.0)


def test_termination_certifies_exact_error():
    # on certified draws, stopping at eps/(m_delta + 1) bounds the true error
    rng = np.random.default_rng(17)
    hits = 0
    for trial in range(20):
        p, sol = gen_synthetic(128, 12, decay=0.85, nu=0.7,
                               seed=int(rng.integers(1 << 30)))
        eps = 10.0 ** rng.uniform(-8, -4)
        x, trace = pcg_run(p, np.zeros((p.d, 1)), m=64, family="gaussian",
                           seed=int(rng.integers(1 << 30)), T=40,
                           tol=eps / 2.0, sol=sol)
        if termination_check(trace.final.delta_tilde, eps=eps, m_delta=1.0):
            assert exact_error(p, x, sol) <= eps
            hits += 1
    assert hits == 20


# ----------------------------------------------------------- adaptivity


def test_adaptive_config_for_method_constants():
    rho = 0.125
    sq = np.sqrt(rho)
    ihs_cfg = AdaptiveConfig.for_method("ihs", rho, 1, 10, "gaussian", 0)
    assert (ihs_cfg.alpha, ihs_cfg.phi_rho) == (1.0, rho)
    pcg_cfg = AdaptiveConfig.for_method("pcg", rho, 1, 10, "gaussian", 0)
    root = np.sqrt(1.0 - rho)
    assert pcg_cfg.alpha == 4.0
    assert np.isclose(pcg_cfg.phi_rho, (1.0 - root) / (1.0 + root))
    assert np.isclose(pcg_cfg.c_alpha_rho, 4.0 * (1.0 + sq) / (1.0 - sq))
    pol_cfg = AdaptiveConfig.for_method("polyak", rho, 1, 10, "gaussian", 0)
    assert np.isclose(pol_cfg.phi_rho, polyak_coefficients(rho)[1])


def test_adaptive_config_rejects_tampered_constant():
    cfg = AdaptiveConfig.for_method("pcg", 0.125, 1, 10, "gaussian", 0)
    with pytest.raises(ValueError):
        AdaptiveConfig(cfg.rho, cfg.m_init, cfg.T, cfg.family, cfg.seed,
                       cfg.alpha, cfg.phi_rho, cfg.c_alpha_rho * 1.5)


def test_adaptive_config_warns_outside_guarantee_range():
    with pytest.warns(UserWarning):
        cfg = AdaptiveConfig.for_method("ihs", 0.3, 1, 10, "gaussian", 0)
    assert not cfg.rho_in_guarantee_range
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ok = AdaptiveConfig.for_method("ihs", 0.2, 1, 10, "gaussian", 0)
    assert ok.rho_in_guarantee_range


def test_adaptive_run_trace_invariants():
    p, sol = gen_synthetic(512, 24, decay=0.85, nu=0.6, seed=64)
    cfg = AdaptiveConfig.for_method("pcg", 0.125, 2, 18, "gaussian", 12)
    _, trace = adaptive_run(p, np.zeros((p.d, 1)), cfg, method="pcg", sol=sol)
    recs = trace.records
    assert recs[0].event == "plain" and recs[0].m == 2
    accepted = 0
    for prev, cur in zip(recs, recs[1:]):
        assert cur.k >= prev.k
        assert cur.event in ("accepted", "resketch")
        if cur.event == "resketch":
            assert cur.t == prev.t          # rejected steps do not advance t
            assert cur.m == min(2 * prev.m, p.n)
            assert cur.k == prev.k + 1
            assert cur.delta_exact is not None
        else:
            assert cur.t == prev.t + 1
            assert cur.m == prev.m
            accepted += 1
    assert accepted == 18                    # runs until T accepted steps
    assert trace.final.t == 18
    assert trace.resketch_count == recs[-1].k


def test_adaptive_run_deterministic_and_prefix_stable():
    p, sol = gen_synthetic(256, 16, decay=0.8, nu=0.6, seed=65)
    cfg = AdaptiveConfig.for_method("pcg", 0.125, 2, 12, "gaussian", 13)
    x1, tr1 = adaptive_run(p, np.zeros((p.d, 1)), cfg, method="pcg", sol=sol)
    x2, tr2 = adaptive_run(p, np.zeros((p.d, 1)), cfg, method="pcg", sol=sol)
    assert np.array_equal(x1, x2)
    assert [r.delta_tilde for r in tr1.records] == [r.delta_tilde for r in tr2.records]
    short_cfg = AdaptiveConfig.for_method("pcg", 0.125, 2, 5, "gaussian", 13)
    _, tr3 = adaptive_run(p, np.zeros((p.d, 1)), short_cfg, method="pcg", sol=sol)
    k = len(tr3.records)
    assert [r.delta_tilde for r in tr3.records] == \
        [r.delta_tilde for r in tr1.records[:k]]
    assert [r.event for r in tr3.records] == [r.event for r in tr1.records[:k]]


def test_adaptive_run_zero_data_never_resketches():
    # A = 0: every sketch is exact, the contraction test always passes
    p = RegularizedProblem(A=np.zeros((32, 5)), B=np.arange(1.0, 6.0), nu=1.2)
    sol = direct_solve(p)
    cfg = AdaptiveConfig.for_method("ihs", 0.2, 1, 10, "gaussian", 14)
    _, trace = adaptive_run(p, np.zeros(5), cfg, method="ihs", sol=sol)
    assert trace.resketch_count == 0
    assert trace.final.m == 1


def test_adaptive_run_generous_initial_sketch_never_resketches():
    # m_init at the certified size: no redraw needed on most seeds; these
    # 20 seeds were checked to give zero redraws
    n, d = 256, 32
    nu = nu_for_target_dimension(
        gen_synthetic(n, d, 0.85, 1.0, seed=33)[0].A, None, target=6.0
    )
    p, sol = gen_synthetic(n, d, 0.85, nu, seed=33)
    for seed in range(20):
        cfg = AdaptiveConfig.for_method("pcg", 0.2, 390, 15, "gaussian",
                                        700 + seed)
        _, trace = adaptive_run(p, np.zeros((p.d, 1)), cfg, method="pcg",
                                sol=sol)
        assert trace.resketch_count == 0
        assert trace.final.m == n  # requested size is clamped at the row count
        errs = trace.delta_exact_series()
        assert errs[-1] <= 1e-12 * errs[0]


def test_adaptive_run_threshold_replay():
    # every accepted step satisfies the recorded envelope, every resketch
    # violates it: reconstruct the decision sequence from the trace
    p, sol = gen_synthetic(512, 24, decay=0.85, nu=0.6, seed=66)
    cfg = AdaptiveConfig.for_method("pcg", 0.125, 2, 15, "gaussian", 15)
    _, trace = adaptive_run(p, np.zeros((p.d, 1)), cfg, method="pcg", sol=sol)
    recs = trace.records
    dt_I, I = recs[0].delta_tilde, 0
    floor = 1e-26 * recs[0].delta_tilde
    for prev, cur in zip(recs, recs[1:]):
        if cur.event == "resketch":
            dt_I, I = cur.delta_tilde, prev.t
            continue
        ell = cur.t - I
        threshold = cfg.c_alpha_rho * cfg.phi_rho**ell
        assert (cur.delta_tilde <= threshold * dt_I + 1e-12 * dt_I
                or cur.delta_tilde <= floor or dt_I <= 0.0)


def test_adaptive_run_polyak_requires_opt_in():
    p, _ = small_problem(67)
    cfg = AdaptiveConfig.for_method("polyak", 0.2, 8, 5, "gaussian", 16)
    with pytest.raises(ValueError):
        adaptive_run(p, np.zeros((p.d, 1)), cfg, method="polyak")
    adaptive_run(p, np.zeros((p.d, 1)), cfg, method="polyak", experimental=True)


def test_adaptive_run_polyak_eventually_converges():
    # the finite-length heavy-ball envelope is very loose for short
    # segments, so early steps may wander; the run still settles
    p, sol = gen_synthetic(256, 16, decay=0.8, nu=0.6, seed=68)
    cfg = AdaptiveConfig.for_method("polyak", 0.2, 4, 150, "gaussian", 17)
    _, trace = adaptive_run(p, np.zeros((p.d, 1)), cfg, method="polyak",
                            sol=sol, experimental=True)
    errs = trace.delta_exact_series()
    assert errs[-1] <= 1e-20 * errs[0]


def test_adaptive_run_rejects_unknown_method():
    p, _ = small_problem(69)
    cfg = AdaptiveConfig.for_method("pcg", 0.125, 2, 5, "gaussian", 18)
    with pytest.raises(ValueError):
        adaptive_run(p, np.zeros((p.d, 1)), cfg, method="sor")

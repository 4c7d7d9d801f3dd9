import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bregalm import (BregmanGeometry, ConfigError, DirectionDistribution, EstimationError,
                     FeasibleSet, KnownConstants, NonsmoothSpec, ProblemSpec, SolverConfig,
                     StageError, StochasticOracle, al_gradient, derive_theory_params,
                     gen_constrained_lasso, multiplier_update, restart_penalties, solve,
                     solve_with_restarts)
from bregalm.estimator import smoothing_moments
from oracles import rademacher_smoothed_gradient


def circle_problem():
    return ProblemSpec(d=3, oracle=StochasticOracle(value=lambda x, xi: 0.0),
                       constraints=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
                       jacobian=lambda x: np.array([[2 * x[0], 2 * x[1], 0.0]]), m=1)


def quadratic_problem(d=10):
    Q = np.diag(np.linspace(1.0, 2.0, d))
    xs = np.linspace(-1.0, 1.0, d)
    f = lambda x: 0.5 * float((x - xs) @ Q @ (x - xs))
    return ProblemSpec(d=d, oracle=StochasticOracle(value=lambda x, xi: f(x)), f=f,
                       grad_f=lambda x: Q @ (x - xs)), Q, xs


def base_config(**kw):
    cfg = dict(eta=0.05, mu=1.0, alpha=1.0, nu=1e-6, n=4, K=50, mu_schedule="fixed")
    cfg.update(kw)
    return SolverConfig(**cfg)


# -- building blocks -----------------------------------------------------------

def test_al_gradient_without_constraints():
    prob, _, _ = quadratic_problem(4)
    s = np.arange(4.0)
    assert np.array_equal(al_gradient(np.zeros(4), np.zeros(0), 3.0, s, prob), s)


def test_al_gradient_zero_multiplier_and_penalty():
    s = np.array([0.1, 0.2, 0.3])
    out = al_gradient(np.array([0.3, 0.1, 0.0]), np.zeros(1), 0.0, s, circle_problem())
    assert np.allclose(out, s)


def test_al_gradient_hand_case():
    out = al_gradient(np.array([1.0, 0.0, 0.0]), np.array([0.5]), 2.0, np.zeros(3),
                      circle_problem())
    assert np.allclose(out, [1.0, 0.0, 0.0])


def test_multiplier_update_examples():
    assert np.allclose(multiplier_update(np.zeros(2), np.array([1.0, -2.0]), 0.1), [0.1, -0.2])
    lam = np.array([0.3, -0.4])
    assert np.array_equal(multiplier_update(lam, np.zeros(2), 0.1), lam)


# -- configuration -------------------------------------------------------------

def test_config_lists_every_bad_field():
    cfg = SolverConfig(eta=-1.0, mu=1.0, alpha=2.0, nu=0.0, n=0, K=10, output_rule="last",
                       dist="cauchy")
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    assert set(err.value.fields) >= {"eta", "alpha", "nu", "n", "output_rule", "dist"}


def test_dual_step_must_stay_below_penalty():
    with pytest.raises(ConfigError) as err:
        SolverConfig(eta=0.1, mu=0.01, alpha=0.5, nu=0.1, n=1, K=10, rho=1.0).validate()
    assert "rho" in err.value.fields
    assert SolverConfig(eta=0.1, mu=0.01, alpha=0.5, nu=0.1, n=1, K=1000).rho_k == 1e-3


def test_problem_requires_three_dimensions():
    with pytest.raises(ConfigError):
        ProblemSpec(d=2, oracle=StochasticOracle(value=lambda x, xi: 0.0))


# -- solver behaviour ----------------------------------------------------------

def test_degenerate_quadratic_converges():
    prob, Q, xs = quadratic_problem(10)
    rep = solve(prob, base_config(eta=0.05, K=2000, n=10), record_iterates=True)
    x_last = rep.trace[-1].x
    assert np.linalg.norm(Q @ (x_last - xs)) <= 1e-2
    assert rep.final_kkt.stationarity <= 1e-2


def test_zero_objective_reaches_hyperplane():
    d = 10
    a = np.ones(d) / math.sqrt(d)
    b = 0.7
    prob = ProblemSpec(d=d, oracle=StochasticOracle(value=lambda x, xi: 0.0),
                       constraints=lambda x: np.array([a @ x - b]),
                       jacobian=lambda x: a[None, :], m=1)
    cfg = base_config(eta=0.005, mu=100.0, K=5000, n=1)
    rep = solve(prob, cfg, x0=np.linspace(-1, 1, d), record_iterates=True)
    viol = rep.column("viol_2")
    assert viol[-1] <= 1e-2
    assert np.all(np.diff(viol[:15]) < 0)
    # with a constant oracle the surrogate is exactly zero, so the run is plain
    # penalty descent with multiplier updates
    x, lam = np.linspace(-1, 1, d), np.zeros(1)
    for k in range(5000):
        c = np.array([a @ x - b])
        x_next = x - cfg.eta * (a * (lam + cfg.mu * c))
        lam = lam + cfg.rho_k * c
        x = x_next
    assert np.allclose(rep.trace[-1].x, x, rtol=0, atol=1e-12)


def test_seeded_runs_are_bitwise_identical():
    inst = gen_constrained_lasso(10, 30, rng=0)
    prob = inst.to_problem(row_batch=4)
    cfg = SolverConfig(eta=1e-3, mu=1.0, alpha=0.5, nu=1e-3, n=5, K=60,
                       geom=BregmanGeometry(1.5), seed=9)
    r1, r2 = solve(prob, cfg, record_iterates=True), solve(prob, cfg, record_iterates=True)
    for a, b in zip(r1.trace, r2.trace):
        assert a.k == b.k and a.f == b.f and a.viol_p == b.viol_p and a.stat_q == b.stat_q
        assert np.array_equal(a.x, b.x) and np.array_equal(a.lam, b.lam)
    assert r1.R == r2.R and np.array_equal(r1.returned_x, r2.returned_x)


def test_iterates_stay_in_box_and_counts_grow():
    inst = gen_constrained_lasso(10, 40, rng=1)
    cfg = SolverConfig(eta=5e-3, mu=1.0, alpha=0.5, nu=1e-3, n=6, n0=12, K=80,
                       geom=BregmanGeometry(1.3))
    rep = solve(inst.to_problem(row_batch=5), cfg, x0=np.full(40, 3.0), record_iterates=True)
    assert rep.x0_projected
    for row in rep.trace:
        assert np.all(np.abs(row.x) <= 1.0 + 1e-12)
    calls = rep.column("oracle_calls")
    assert np.all(np.diff(calls) >= 0)
    assert rep.oracle_count == 2 * 12 + 4 * 6 * 79


def test_output_index_and_returned_iterate():
    prob, _, _ = quadratic_problem(5)
    cfg = base_config(K=30, seed=4)
    rep = solve(prob, cfg, record_iterates=True)
    assert rep.R == int(np.random.default_rng(4).integers(30))
    assert np.array_equal(rep.returned_x, rep.trace[rep.R + 1].x)


def test_best_kkt_rule_picks_smallest_residual():
    prob, _, _ = quadratic_problem(5)
    rep = solve(prob, base_config(K=40, output_rule="best_kkt"), record_iterates=True)
    scores = [max(r.stat_q, r.viol_p) for r in rep.trace[1:]]
    best = rep.trace[1 + int(np.argmin(scores))]
    assert np.array_equal(rep.returned_x, best.x)


def test_final_residual_uses_shifted_multiplier():
    prob = circle_problem()
    rep = solve(prob, base_config(K=20, mu=3.0), x0=np.array([0.2, 0.1, 0.0]),
                record_iterates=True)
    row = rep.trace[rep.R + 1]
    c = prob.c(rep.returned_x)
    assert np.array_equal(rep.returned_lambda, row.lam)
    assert rep.final_kkt.feasibility == pytest.approx(abs(c[0]))
    # stationarity with lam + mu c: objective is zero, so the mapping is J^T(lam + mu c)
    g = prob.jac(rep.returned_x).T @ (row.lam + 3.0 * c)
    assert rep.final_kkt.stationarity == pytest.approx(np.linalg.norm(g), rel=1e-12)


def test_geometric_penalty_schedule_caps():
    prob = circle_problem()
    cfg = base_config(K=100, mu=1.0, mu_schedule="geometric", mu_growth=2.0, mu_cap=10.0,
                      mu_every=10, eta=1e-3)
    rep = solve(prob, cfg, x0=np.array([0.5, 0.5, 0.0]))
    mus = rep.column("mu")
    assert mus[0] == 1.0 and mus[10] == 2.0 and mus[20] == 4.0 and mus[30] == 8.0
    assert mus.max() == 10.0


def test_oracle_failure_keeps_partial_trace():
    calls = {"n": 0}

    def value(x, xi):
        calls["n"] += 1
        return float("nan") if calls["n"] > 40 else float(x @ x)

    prob = ProblemSpec(d=3, oracle=StochasticOracle(value=value))
    with pytest.raises(EstimationError) as err:
        solve(prob, base_config(K=100, n=2))
    assert len(err.value.partial) > 0


def test_multiplier_bounds_along_trace():
    inst = gen_constrained_lasso(10, 40, rng=3)
    cfg = SolverConfig(eta=5e-3, mu=1.0, alpha=0.5, nu=1e-3, n=6, K=150, rho=20.0,
                       geom=BregmanGeometry(1.5))
    rep = solve(inst.to_problem(row_batch=5), cfg)
    F = float(np.sum(np.ones(40) * 1.0) + abs(inst.c_target))  # |c| <= sum x^2 + |c_target|
    lam = np.array([r.lam for r in rep.trace])
    for k in range(len(rep.trace) - 1):
        row = rep.trace[k]
        step = np.abs(lam[k + 1] - lam[k])
        # one rounding of the update may add an ulp of the multiplier itself
        ulp = np.spacing(np.maximum(np.abs(lam[k]), np.abs(lam[k + 1])))
        assert np.all(step <= row.rho_k * row.c_max + ulp)
        assert np.all(np.abs(lam[k + 1]) <= F * cfg.rho_k * (k + 1))


def test_descent_inequality_on_noise_free_run():
    d = 4
    A = np.array([[1.0, 0.3, 0.0, 0.1], [0.3, 1.5, 0.2, 0.0], [0.0, 0.2, 0.8, 0.1],
                  [0.1, 0.0, 0.1, 1.2]])
    f = lambda x: 0.5 * float(x @ A @ x) + float(np.sum(np.sin(x)))
    grad = lambda x: A @ x + np.cos(x)
    L_f = float(np.linalg.eigvalsh(A).max()) + 1.0
    prob = ProblemSpec(d=d, oracle=StochasticOracle(value=lambda x, xi: f(x)),
                       constraints=lambda x: np.array([x @ x - 1.0]),
                       jacobian=lambda x: 2 * x[None, :], m=1, h=NonsmoothSpec(0.05),
                       X=FeasibleSet.box(-1.0, 1.0, d=d), f=f, grad_f=grad)
    F, M_c, L_c, mu, rho, K = 3.0, 4.0, 2.0, 2.0, 1.0, 200
    L_mu = L_f + (mu * M_c ** 2 + mu * F * L_c + rho * F * L_c)
    eta = 0.5 / L_mu
    nu = 1e-3
    cfg = SolverConfig(eta=eta, mu=mu, alpha=0.3, nu=nu, n=3, K=K, rho=rho,
                       mu_schedule="fixed")
    rep = solve(prob, cfg, x0=np.array([0.5, -0.5, 0.2, 0.1]), record_iterates=True)
    m6 = smoothing_moments(DirectionDistribution("rademacher", d)).m6
    bad = 0
    for k in range(K):
        a, b = rep.trace[k], rep.trace[k + 1]
        eps = a.s - rademacher_smoothed_gradient(f, a.x, nu)
        slack = eta * nu ** 2 * L_f ** 2 * m6 / 4 + eta * float(eps @ eps) + rho / K * F ** 2
        if b.al - a.al > slack + 1e-12:
            bad += 1
    assert bad == 0


# -- theory parameters --------------------------------------------------------

FULL = dict(L_f=1.0, M_f=1.0, M_c=1.0, L_c=1.0, F_bound=1.0, sigma=1.0, beta=1.0,
            C0=0.0, C_i=-1.0, delta0=1.0, c0_sq=0.0)


def test_theory_momentum_weight_formula():
    cfg = derive_theory_params(KnownConstants(**FULL), 0.1, BregmanGeometry(2.0),
                               DirectionDistribution("rademacher", 16), 16, 1)
    assert cfg.alpha == pytest.approx(96 * 1.0 * cfg.eta ** 2, rel=1e-14)
    # the stated example: L_f = 1, eta = 0.05
    assert 96 * 1.0 ** 2 * 0.05 ** 2 == pytest.approx(0.24)


def test_theory_batch_for_euclidean_rademacher():
    cfg = derive_theory_params(KnownConstants(**FULL), 0.1, BregmanGeometry(2.0),
                               DirectionDistribution("rademacher", 100), 100, 1)
    assert cfg.n == 100


def test_theory_hypotheses_hold():
    d, m, eps = 16, 1, 0.1
    geom = BregmanGeometry(2.0)
    cfg = derive_theory_params(KnownConstants(**FULL), eps, geom,
                               DirectionDistribution("rademacher", d), d, m)
    th = cfg.theory
    assert cfg.eta * th["L_mu"] <= 0.5
    sp = th["S_p"]
    assert cfg.alpha >= 96 * (geom.p - 1) * sp * cfg.eta ** 2 * 1.0 / cfg.n * (1 - 1e-12)
    assert cfg.mu_schedule == "fixed" and cfg.per_sample_directions
    assert cfg.rho_k < cfg.mu
    # the radius actually used keeps the variance proxy within the value the step was sized for
    mom = smoothing_moments(DirectionDistribution("rademacher", d), geom.p)
    true_st2 = cfg.nu ** 2 * mom.m6 + 4 * sp * 2 + 2
    assert true_st2 <= th["sigma_tilde_sq"] * (1 + 1e-12)


def test_theory_high_p_branch():
    d = 16
    geom = BregmanGeometry.from_p(10.0)  # 10 > 2 ln 16
    cfg = derive_theory_params(KnownConstants(**FULL), 0.1, geom,
                               DirectionDistribution("rademacher", d), d, 1)
    two_ln_d = 2 * math.log(d)
    assert cfg.theory["branch"] == "p>2ln d"
    assert cfg.theory["S_p"] == pytest.approx(d ** (2 / two_ln_d))
    assert cfg.theory["n_real"] == pytest.approx((two_ln_d - 1) * d ** (2 / two_ln_d))


def test_theory_missing_constants_listed():
    with pytest.raises(ConfigError) as err:
        derive_theory_params(KnownConstants(L_f=1.0), 0.1, BregmanGeometry(2.0),
                             DirectionDistribution("rademacher", 4), 4, 1)
    assert {"M_f", "sigma", "beta"} <= set(err.value.fields)


# -- restarts -----------------------------------------------------------------

def test_restart_penalties():
    assert restart_penalties(0.1) == [1.0, 2.0, 8.0, 128.0]
    assert restart_penalties(1.0) == [1.0]
    assert restart_penalties(1e-6)[-1] >= 1e6


@settings(max_examples=30, deadline=None)
@given(eps=st.floats(1e-8, 1.0))
def test_restart_recursion_exact(eps):
    mus = restart_penalties(eps)
    assert all(b == 2 * a * a for a, b in zip(mus, mus[1:]))
    assert mus[-1] >= 1 / eps and (len(mus) == 1 or mus[-2] < 1 / eps)


def test_restarts_warm_start_and_scale():
    inst = gen_constrained_lasso(10, 40, rng=0)
    prob = inst.to_problem(row_batch=5)
    cfg = SolverConfig(eta=5e-3, mu=1.0, alpha=0.5, nu=1e-3, n=6, K=40,
                       geom=BregmanGeometry(1.5))
    rep = solve_with_restarts(prob, cfg, 0.1)
    assert [s[0] for s in rep.stages] == [1.0, 2.0, 8.0, 128.0]
    scale = 40 ** (0.5 - 1 / 3)
    assert [s[1] for s in rep.stages] == pytest.approx([scale * m for m in (1, 2, 8, 128)])
    assert len(rep.trace) == 4 * 41
    ks = [r.k for r in rep.trace]
    assert ks == sorted(ks) and len(set(ks)) == len(ks)
    single = solve_with_restarts(prob, cfg, 1.0)
    assert len(single.stages) == 1


def test_restart_failure_reports_stage_count():
    calls = {"n": 0}

    def value(x, xi):
        calls["n"] += 1
        return float("inf") if calls["n"] > 300 else float(x @ x)

    prob = ProblemSpec(d=3, oracle=StochasticOracle(value=value), grad_f=lambda x: 2 * x)
    with pytest.raises(StageError) as err:
        solve_with_restarts(prob, base_config(K=30, n=1), 0.01)
    assert err.value.stages_completed >= 1

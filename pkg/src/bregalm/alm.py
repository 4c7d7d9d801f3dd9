"""Stochastic zeroth-order linearized augmented Lagrangian loop.

Each iteration

1. refreshes the momentum gradient surrogate ``s_k`` from noisy values,
2. takes a Bregman proximal step on the linearised augmented Lagrangian
   ``<s_k + J(x_k)^T (lam_k + mu c(x_k)), x> + h(x) + V(x_k, x) / eta``,
3. moves the multipliers by ``rho_k c(x_k)`` with ``rho_k = rho / K``.

The default output is a uniformly drawn iterate ``x_{R+1}``, ``R`` in
``{0, ..., K-1}``.  Also provided: parameter settings derived from problem
constants, and a restart driver that raises the penalty as
``mu_{s+1} = 2 mu_s^2``.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .bregman import BregmanGeometry, FeasibleSet, NonsmoothSpec, prox_step
from .estimator import (DirectionDistribution, MomentState, StochasticOracle,
                        momentum_update, smoothing_moments)
from .exceptions import BregalmError, ConfigError, StageError
from .metrics import KktResidual, gradient_mapping, kkt_residual, norm_p

log = logging.getLogger(__name__)

OUTPUT_RULES = ("uniform", "best_kkt")
MU_SCHEDULES = ("fixed", "geometric")


@dataclass
class KnownConstants:
    """Problem constants used only when deriving theory-mode parameters.

    ``C_i`` may be a scalar shared by every constraint.  ``delta0`` and
    ``c0_sq`` (``||c(x0)||_2^2``) can be given directly; otherwise they are
    computed from the problem and starting point.
    """

    L_f: Optional[float] = None
    M_f: Optional[float] = None
    M_h: float = 0.0
    M_c: Optional[float] = None
    L_c: Optional[float] = None
    F_bound: Optional[float] = None
    sigma: Optional[float] = None
    beta: Optional[float] = None
    C0: Optional[float] = None
    C_i: Optional[object] = None
    delta0: Optional[float] = None
    c0_sq: Optional[float] = None


def _empty_c(x):
    return np.zeros(0)


@dataclass
class ProblemSpec:
    """``min_{x in X} E[F(x, xi)] + h(x)  s.t.  c(x) = 0``.

    ``constraints`` maps ``x`` to an ``(m,)`` array and ``jacobian`` to its
    exact ``(m, d)`` Jacobian.  ``f``/``grad_f`` are optional noise-free
    versions of the objective used for diagnostics only; the solver itself
    reads the objective exclusively through ``oracle``.
    """

    d: int
    oracle: StochasticOracle
    constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    m: int = 0
    h: NonsmoothSpec = field(default_factory=NonsmoothSpec)
    X: FeasibleSet = field(default_factory=FeasibleSet)
    f: Optional[Callable[[np.ndarray], float]] = None
    grad_f: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constants: Optional[KnownConstants] = None
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        bad = []
        if int(self.d) < 3:
            bad.append("d")
        if self.m < 0:
            bad.append("m")
        if self.m > 0 and (self.constraints is None or self.jacobian is None):
            bad.append("constraints")
        if not self.X.is_whole_space and self.X.lower.shape != (self.d,):
            bad.append("X")
        if bad:
            raise ConfigError(f"invalid problem fields: {', '.join(bad)}", bad)

    def c(self, x) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return np.asarray(self.constraints(x), dtype=float).reshape(self.m)

    def jac(self, x) -> np.ndarray:
        if self.m == 0:
            return np.zeros((0, self.d))
        return np.asarray(self.jacobian(x), dtype=float).reshape(self.m, self.d)

    def objective(self, x) -> float:
        if self.f is None:
            return math.nan
        return float(self.f(x)) + self.h.value(x)

    def al_value(self, x, lam, mu) -> float:
        """Augmented Lagrangian ``f + h + lam^T c + mu/2 ||c||^2`` (needs ``f``)."""
        c = self.c(x)
        return self.objective(x) + float(lam @ c) + 0.5 * mu * float(c @ c)


@dataclass
class SolverConfig:
    eta: float
    mu: float
    alpha: float
    nu: float
    n: int
    K: int
    n0: Optional[int] = None  # first-iteration batch; defaults to n
    rho: float = 1.0  # per-step dual step is rho / K
    geom: BregmanGeometry = field(default_factory=BregmanGeometry)
    dist: str = "rademacher"
    seed: int = 0
    output_rule: str = "uniform"
    mu_schedule: str = "geometric"
    mu_cap: Optional[float] = 1000.0
    mu_growth: float = 1.5
    mu_every: Optional[int] = None  # defaults to max(1, K // 20)
    per_sample_directions: bool = False
    stop_tol: Optional[float] = None
    kkt_trials: int = 20_000
    theory: Optional[dict] = None

    @property
    def rho_k(self) -> float:
        return self.rho / self.K

    @property
    def batch0(self) -> int:
        return self.n if self.n0 is None else self.n0

    def validate(self) -> "SolverConfig":
        bad = []
        for name in ("eta", "mu", "nu", "rho"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                bad.append(name)
        if not (0.0 < self.alpha <= 1.0):
            bad.append("alpha")
        for name in ("n", "K"):
            if int(getattr(self, name)) < 1:
                bad.append(name)
        if self.n0 is not None and int(self.n0) < 1:
            bad.append("n0")
        if "rho" not in bad and "mu" not in bad and "K" not in bad \
                and not self.rho_k < self.mu:
            bad.append("rho")
        if self.output_rule not in OUTPUT_RULES:
            bad.append("output_rule")
        if self.mu_schedule not in MU_SCHEDULES:
            bad.append("mu_schedule")
        if self.mu_cap is not None and not self.mu_cap > 0:
            bad.append("mu_cap")
        if not self.mu_growth >= 1.0:
            bad.append("mu_growth")
        if self.dist not in ("rademacher", "gaussian", "sphere"):
            bad.append("dist")
        if self.stop_tol is not None and not self.stop_tol > 0:
            bad.append("stop_tol")
        if bad:
            raise ConfigError(f"invalid solver configuration: {', '.join(bad)}", bad)
        return self

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TraceRow:
    k: int
    f: float  # f(x_k) + h(x_k), nan without a deterministic objective
    viol_p: float
    viol_2: float
    al: float
    stat_q: float
    oracle_calls: int
    wall_ms: float
    mu: float
    rho_k: float
    lam: np.ndarray
    c_max: float  # max_j |c_j(x_k)|
    x: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None


@dataclass
class IterateState:
    x: np.ndarray
    lam: np.ndarray
    moment: MomentState
    k: int = 0


@dataclass
class RunReport:
    trace: List[TraceRow]
    returned_x: np.ndarray
    returned_lambda: np.ndarray
    R: int
    final_kkt: KktResidual
    mu_final: float
    iterations: int
    oracle_count: int
    x0_projected: bool = False
    stopped_early: bool = False
    stages: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.trace])


def al_gradient(x, lam, mu, s, problem: ProblemSpec, cx=None, J=None) -> np.ndarray:
    """``s + J(x)^T (lam + mu c(x))`` -- the linearisation direction of the primal step."""
    if problem.m == 0:
        return np.array(s, dtype=float)
    cx = problem.c(x) if cx is None else cx
    J = problem.jac(x) if J is None else J
    return s + J.T @ (lam + mu * cx)


def multiplier_update(lam, c_x, rho_k: float) -> np.ndarray:
    return lam + rho_k * np.asarray(c_x, dtype=float)


def _stationarity(problem, x, lam, mu, cx, J, s, config):
    """Per-iteration stationarity: exact gradient if known, the surrogate otherwise."""
    grad = problem.grad_f(x) if problem.grad_f is not None else s
    if problem.m:
        grad = grad + J.T @ (lam + mu * cx)
    G = gradient_mapping(x, grad, config.eta, config.geom, problem.h, problem.X)
    return norm_p(G, config.geom.q)


def solve(problem: ProblemSpec, config: SolverConfig, rng: Optional[np.random.Generator] = None,
          x0=None, lambda0=None, record_iterates: bool = False) -> RunReport:
    """Run ``config.K`` iterations and return the report.

    Random draws come from ``rng`` (default ``default_rng(config.seed)``) in a
    fixed order: first the output index ``R``, then per iteration the
    direction(s) followed by the sample tokens.
    """
    config.validate()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    dist = DirectionDistribution(config.dist, problem.d)
    geom = config.geom

    x = problem.x0 if x0 is None else x0
    x = np.zeros(problem.d) if x is None else np.array(x, dtype=float)
    projected = not problem.X.contains(x)
    if projected:
        x = problem.X.project(x)
    lam = np.zeros(problem.m) if lambda0 is None else np.array(lambda0, dtype=float)
    mu = float(config.mu)
    rho_k = config.rho_k
    every = config.mu_every or max(1, config.K // 20)

    R = int(rng.integers(config.K))
    state = MomentState()
    trace: List[TraceRow] = []
    t0 = time.perf_counter()
    chosen = None  # (x, lam, mu, index)
    best = (math.inf, None)
    stopped = False

    def make_row(k, x, lam, mu, cx, J, s):
        stat = _stationarity(problem, x, lam, mu, cx, J, s, config) \
            if (s is not None or problem.grad_f is not None) else math.nan
        al = problem.al_value(x, lam, mu) if problem.f is not None else math.nan
        return TraceRow(
            k=k, f=problem.objective(x),
            viol_p=norm_p(cx, geom.p) if cx.size else 0.0,
            viol_2=norm_p(cx, 2) if cx.size else 0.0,
            al=al, stat_q=stat, oracle_calls=state.oracle_count,
            wall_ms=1e3 * (time.perf_counter() - t0), mu=mu, rho_k=rho_k,
            lam=lam.copy(), c_max=float(np.max(np.abs(cx))) if cx.size else 0.0,
            x=x.copy() if record_iterates else None,
            s=(None if s is None else s.copy()) if record_iterates else None)

    k = 0
    try:
        for k in range(config.K):
            if config.mu_schedule == "geometric" and k > 0 and k % every == 0:
                mu = mu * config.mu_growth
                if config.mu_cap is not None:
                    mu = min(mu, max(config.mu_cap, config.mu))
            state = momentum_update(state, problem.oracle, x, dist, config.nu, config.alpha,
                                    config.n, rng, n0=config.batch0,
                                    per_sample_directions=config.per_sample_directions)
            cx, J = problem.c(x), problem.jac(x)
            row = make_row(k, x, lam, mu, cx, J, state.s)
            trace.append(row)
            if k >= 1:
                best = _track_best(best, row, x, lam, mu)
            if k == R + 1 and config.output_rule == "uniform" and chosen is None:
                chosen = (x, lam, mu, k)
            if config.stop_tol is not None and row.stat_q <= config.stop_tol \
                    and row.viol_p <= config.stop_tol:
                chosen = (x, lam, mu, k)
                stopped = True
                break
            g = al_gradient(x, lam, mu, state.s, problem, cx=cx, J=J)
            x_next = prox_step(x, g, config.eta, geom, problem.h, problem.X)
            lam = multiplier_update(lam, cx, rho_k)
            x = x_next
        else:
            k = config.K
            cx, J = problem.c(x), problem.jac(x)
            row = make_row(k, x, lam, mu, cx, J, None)
            trace.append(row)
            best = _track_best(best, row, x, lam, mu)
            if config.output_rule == "uniform" and chosen is None:
                chosen = (x, lam, mu, k)
    except BregalmError as exc:
        exc.partial = trace
        raise

    if config.output_rule == "best_kkt" and not stopped and best[1] is not None:
        chosen = best[1]
    x_ret, lam_ret, mu_ret, idx = chosen
    c_ret = problem.c(x_ret)
    lam_tilde = lam_ret + mu_ret * c_ret if c_ret.size else lam_ret
    final = kkt_residual(x_ret, lam_tilde, problem, config.eta, geom,
                         rng=np.random.default_rng(config.seed + 1), trials=config.kkt_trials)
    return RunReport(trace=trace, returned_x=x_ret.copy(), returned_lambda=lam_ret.copy(),
                     R=idx - 1, final_kkt=final, mu_final=mu, iterations=k,
                     oracle_count=state.oracle_count, x0_projected=projected,
                     stopped_early=stopped)


def _track_best(best, row, x, lam, mu):
    score = max(row.stat_q, row.viol_p)
    if math.isnan(score):
        score = row.viol_p
    if score < best[0]:
        return score, (x, lam, mu, row.k)
    return best


# -- theory-mode parameters ---------------------------------------------------

REQUIRED_CONSTANTS = ("L_f", "M_f", "M_c", "L_c", "F_bound", "sigma", "beta")


def _lagrangian_lower_bounds(kc: KnownConstants, m: int):
    C0 = kc.C0
    Ci = kc.C_i
    if Ci is None:
        Ci = -kc.F_bound
    Ci = np.broadcast_to(np.asarray(Ci, dtype=float), (m,))
    return C0, Ci


def derive_theory_params(constants: KnownConstants, epsilon: float, geom: BregmanGeometry,
                         dist: DirectionDistribution, d: int, m: int, rho: float = 1.0,
                         problem: Optional[ProblemSpec] = None, x0=None,
                         seed: int = 0) -> SolverConfig:
    """Parameter settings that certify an ``epsilon``-KKT point in expectation.

    Implements the step-size / penalty / batch / horizon block for
    ``p <= 2 ln d``; for ``p > 2 ln d`` the batch and step size use
    ``S_{2 ln d}`` with ``n = (2 ln d - 1) S_{2 ln d}``.  The smoothing radius
    and step size depend on each other through the variance proxy; one
    fixed-point pass computes the step from an upper bound on that proxy, so
    the returned combination satisfies every hypothesis.
    """
    kc = constants
    missing = [name for name in REQUIRED_CONSTANTS if getattr(kc, name) is None]
    if kc.delta0 is None and (kc.C0 is None or problem is None):
        missing.append("delta0 (or C0 with a problem)")
    if missing:
        raise ConfigError(f"missing constants: {', '.join(missing)}", missing)
    bad = [name for name in ("L_f", "M_f", "beta") if not getattr(kc, name) > 0]
    bad += [name for name in ("M_c", "L_c", "F_bound", "sigma", "M_h")
            if not getattr(kc, name) >= 0]
    if not epsilon > 0:
        bad.append("epsilon")
    if bad:
        raise ConfigError(f"constants must be positive: {', '.join(bad)}", bad)

    p = geom.p
    two_ln_d = 2.0 * math.log(d)
    p_eff = p if p <= two_ln_d else two_ln_d
    mom = smoothing_moments(dist, p_eff)
    sp, m6 = mom.sp, mom.m6
    L_f, M_f, M_h, M_c, L_c, F = kc.L_f, kc.M_f, kc.M_h, kc.M_c, kc.L_c, kc.F_bound
    sigma, beta, L_v = kc.sigma, kc.beta, geom.L_v
    eps2 = epsilon ** 2

    mu = math.sqrt(max(10.0 * (8 * L_v ** 2 + 3) / (27 * beta ** 2),
                       8.0 * (2 * L_v ** 2 + 1) / (3 * beta ** 2),
                       40.0 * (M_f ** 2 + M_h ** 2 + m ** 2 * rho ** 2 * F ** 2 * M_c ** 2)
                       / (beta ** 2 * eps2)))
    L_mu = L_f + m * (mu * M_c ** 2 + mu * F * L_c + rho * F * L_c)

    def sigma_tilde_sq(nu):
        return nu ** 2 * L_f ** 2 * m6 + 4 * sp * (sigma ** 2 + M_f ** 2) + 2 * M_f ** 2

    def step(st2):
        return math.sqrt(min(1.0 / (4 * L_mu ** 2), sp * eps2 / (23040 * L_f ** 2 * st2)))

    def radius(eta):
        return math.sqrt(min(eps2 / (4 * (4 * L_f ** 2 + 3 / eta ** 2) * m6),
                             beta ** 2 * mu ** 2 * eta ** 2 * eps2 / (20 * (2 * L_v ** 2 + 1) * m6)))

    eta0 = step(sigma_tilde_sq(0.0))
    nu_hi = radius(eta0)
    st2 = sigma_tilde_sq(nu_hi)
    eta = step(st2)
    nu = radius(eta)  # <= nu_hi, so st2 still bounds the true proxy

    alpha = 96 * L_f ** 2 * eta ** 2
    if p <= two_ln_d:
        n = (p - 1) * sp
    else:
        n = (two_ln_d - 1) * sp
    n0 = 5 * st2 / (4 * eps2)

    if kc.delta0 is not None:
        delta0 = kc.delta0
        c0_sq = kc.c0_sq if kc.c0_sq is not None else 0.0
    else:
        x_start = problem.x0 if x0 is None else x0
        x_start = np.zeros(d) if x_start is None else np.asarray(x_start, dtype=float)
        c0 = problem.c(x_start)
        c0_sq = float(c0 @ c0)
        C0, Ci = _lagrangian_lower_bounds(kc, m)
        al0 = problem.al_value(x_start, np.zeros(m), mu)
        delta0 = al0 - C0 - float(np.sum(rho * F * Ci)) + m * rho * F ** 2
    K = max(108 * delta0 / (eta * eps2), 5 * c0_sq / eps2, 1.0 / (L_f ** 2 * eta ** 2))

    theory = dict(sigma_tilde_sq=st2, L_mu=L_mu, delta0=delta0, c0_sq=c0_sq, S_p=sp, m6=m6,
                  branch="p<=2ln d" if p <= two_ln_d else "p>2ln d",
                  n_real=n, n0_real=n0, K_real=K)
    return SolverConfig(eta=eta, mu=mu, alpha=min(alpha, 1.0), nu=nu, n=int(math.ceil(n)),
                        n0=int(math.ceil(n0)), K=int(math.ceil(K)), rho=rho, geom=geom,
                        dist=dist.kind, seed=seed, mu_schedule="fixed", mu_cap=None,
                        per_sample_directions=True, theory=theory)


# -- restarts ----------------------------------------------------------------

def restart_penalties(epsilon: float, mu1: float = 1.0, max_stages: int = 64) -> List[float]:
    """Stage penalties ``mu1, 2 mu1^2, ...`` up to the first one >= ``1/epsilon``."""
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive", ["epsilon"])
    mus = [float(mu1)]
    while mus[-1] < 1.0 / epsilon:
        if len(mus) >= max_stages:
            raise ConfigError("penalty recursion does not reach 1/epsilon", ["mu1"])
        mus.append(2.0 * mus[-1] ** 2)
    return mus


def solve_with_restarts(problem: ProblemSpec, base_config: SolverConfig, epsilon: float,
                        rng: Optional[np.random.Generator] = None, x0=None,
                        mu1: float = 1.0) -> RunReport:
    """Multi-stage solve with a fixed penalty per stage, warm-started from the previous output.

    Stage ``s`` uses ``mu = mu_s * d^(1/2 - 1/p)``; multipliers restart at zero.
    The returned report is the last stage's, with the trace of every stage
    concatenated (iteration indices and oracle counts continue across stages)
    and ``stages`` listing ``(mu_s, penalty_used, report)``.
    """
    base_config.validate()
    rng = np.random.default_rng(base_config.seed) if rng is None else rng
    scale = problem.d ** (0.5 - 1.0 / base_config.geom.p)
    x = x0
    trace: List[TraceRow] = []
    stages = []
    k_off, calls_off = 0, 0
    report = None
    for i, mu_s in enumerate(restart_penalties(epsilon, mu1)):
        cfg = base_config.replace(mu=mu_s * scale, mu_schedule="fixed")
        try:
            report = solve(problem, cfg, rng=rng, x0=x)
        except BregalmError as exc:
            raise StageError(f"restart stage {i + 1} failed: {exc}", stages_completed=i,
                             partial=stages) from exc
        for row in report.trace:
            trace.append(dataclasses.replace(row, k=row.k + k_off,
                                             oracle_calls=row.oracle_calls + calls_off))
        k_off += report.iterations + 1
        calls_off += report.oracle_count
        stages.append((mu_s, cfg.mu, report))
        x = report.returned_x
    return dataclasses.replace(report, trace=trace, oracle_count=calls_off, stages=stages)

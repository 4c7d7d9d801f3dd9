"""KKT residuals: gradient mapping, l_p constraint violation and an empirical regularity estimate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bregman import BregmanGeometry, FeasibleSet, NonsmoothSpec, conjugate_exponent, prox_step
from .estimator import DirectionDistribution, mean_estimate
from .exceptions import ConfigError


def norm_p(x, p: float) -> float:
    """Standard l_p norm; ``p = np.inf`` gives the max norm."""
    if p < 1:
        raise ConfigError(f"norm order must be >= 1, got {p}", ["p"])
    return float(np.linalg.norm(np.ravel(np.asarray(x, dtype=float)), ord=p))


def dual_exponent(p: float) -> float:
    return conjugate_exponent(p)


def holder_gap(x, y, p: float) -> float:
    """``||x||_p ||y||_q - <x, y>``; non-negative by Hoelder's inequality."""
    return norm_p(x, p) * norm_p(y, dual_exponent(p)) - float(np.dot(x, y))


def gradient_mapping(x, g, eta: float, geom: BregmanGeometry,
                     h: NonsmoothSpec = NonsmoothSpec(),
                     X: FeasibleSet = FeasibleSet()) -> np.ndarray:
    """``(x - x_plus) / eta`` with ``x_plus`` the Bregman proximal point of ``g`` at ``x``."""
    x = np.asarray(x, dtype=float)
    return (x - prox_step(x, g, eta, geom, h, X)) / eta


@dataclass(frozen=True)
class KktResidual:
    stationarity: float  # ||gradient mapping||_q
    feasibility: float  # ||c(x)||_p
    eta_used: float
    p: float
    q: float
    approximated: bool = False  # objective gradient replaced by a smoothed estimate

    def is_eps_kkt(self, eps: float) -> bool:
        return self.stationarity <= eps and self.feasibility <= eps


def objective_gradient(problem, x, allow_approximation=True, dist=None, nu=1e-6,
                       trials=100_000, rng=None):
    """Exact gradient when the problem carries one, else a high-trial smoothed estimate.

    Returns ``(gradient, approximated)``.
    """
    if problem.grad_f is not None:
        return np.asarray(problem.grad_f(x), dtype=float), False
    if not allow_approximation:
        raise ConfigError("problem has no deterministic gradient and approximation is "
                          "disabled", ["grad_f"])
    dist = dist or DirectionDistribution("gaussian", problem.d)
    rng = rng if rng is not None else np.random.default_rng(0)
    return mean_estimate(problem.oracle, x, dist, nu, trials, rng), True


def kkt_residual(x, lambda_tilde, problem, eta: float, geom: BregmanGeometry,
                 allow_approximation: bool = True, rng=None, trials: int = 100_000,
                 nu: float = 1e-6) -> KktResidual:
    """Stationarity and feasibility residuals of ``x`` paired with multipliers ``lambda_tilde``."""
    x = np.asarray(x, dtype=float)
    grad, approx = objective_gradient(problem, x, allow_approximation, nu=nu,
                                      trials=trials, rng=rng)
    c = problem.c(x)
    if c.size:
        grad = grad + problem.jac(x).T @ np.asarray(lambda_tilde, dtype=float)
    G = gradient_mapping(x, grad, eta, geom, problem.h, problem.X)
    return KktResidual(stationarity=norm_p(G, geom.q),
                       feasibility=norm_p(c, geom.p) if c.size else 0.0,
                       eta_used=eta, p=geom.p, q=geom.q, approximated=approx)


def dist_to_neg_normal_cone(w, x, X: FeasibleSet, p: float, tol: float = 1e-12) -> float:
    """l_p distance from ``w`` to ``-N_X(x)`` for a box (or the whole space)."""
    w = np.asarray(w, dtype=float)
    if X.is_whole_space:
        return norm_p(w, p)
    r = w.copy()
    at_hi = x >= X.upper - tol
    at_lo = x <= X.lower + tol
    # -N_X has non-positive entries at upper bounds, non-negative at lower bounds
    r[at_hi] = np.maximum(w[at_hi], 0.0)
    r[at_lo] = np.minimum(w[at_lo], 0.0)
    r[at_hi & at_lo] = 0.0
    return norm_p(r, p)


def empirical_beta(x, problem, p: float) -> Optional[float]:
    """``dist_p(J^T c, -N_X(x)) / ||c||_p`` at ``x``; ``None`` when ``c(x) = 0``."""
    c = problem.c(x)
    cn = norm_p(c, p) if c.size else 0.0
    if cn == 0.0:
        return None
    return dist_to_neg_normal_cone(problem.jac(x).T @ c, x, problem.X, p) / cn

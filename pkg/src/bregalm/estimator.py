"""Two-point zeroth-order gradient estimation with momentum variance reduction.

The objective is only reachable through a stochastic value oracle
``F(x, xi)``.  A gradient surrogate is built from forward differences along
random directions ``u`` with ``E[u u^T] = I``::

    G(x; u, xi) = (F(x + nu*u, xi) - F(x, xi)) / nu * u

and blended across iterations with a recursive momentum correction that
re-evaluates the previous iterate with the *same* direction and sample
tokens (common random numbers).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import ConfigError, EstimationError

DIRECTION_KINDS = ("rademacher", "gaussian", "sphere")
CHUNK = 1 << 15  # largest batch evaluated in one vectorised call


@dataclass(frozen=True)
class DirectionDistribution:
    """Law of the smoothing direction ``u`` in dimension ``d``.

    ``sphere`` is the uniform law on the sphere of radius ``sqrt(d)`` so that
    all three kinds share ``E[u u^T] = I``.
    """

    kind: str
    d: int

    def __post_init__(self):
        if self.kind not in DIRECTION_KINDS:
            raise ConfigError(f"unknown direction kind {self.kind!r}", ["dist"])
        if int(self.d) < 1:
            raise ConfigError("direction dimension must be >= 1", ["d"])


@dataclass(frozen=True)
class SmoothingMoments:
    m3: float  # E ||u||_2^3
    m6: float  # E ||u||_2^6
    sp: float  # S_p constant for the requested p


def sample_direction(dist: DirectionDistribution, rng: np.random.Generator,
                     size: Optional[int] = None) -> np.ndarray:
    """Draw one direction (``size=None``) or a ``(size, d)`` stack of them."""
    shape = (dist.d,) if size is None else (size, dist.d)
    if dist.kind == "rademacher":
        return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
    u = rng.standard_normal(shape)
    if dist.kind == "sphere":
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
        u = math.sqrt(dist.d) * u / norms
    return u


def smoothing_moments(dist: DirectionDistribution, p: float = 2.0) -> SmoothingMoments:
    """Closed-form moments of ``||u||_2`` and the constant ``S_p``.

    For Gaussian and sphere directions with ``p > 2`` no closed form is
    available; ``S_2`` is returned, which upper-bounds ``S_p`` because
    ``||.||_p <= ||.||_2``.
    """
    d = dist.d
    if dist.kind in ("rademacher", "sphere"):
        m3, m6 = d ** 1.5, float(d) ** 3
    else:
        # E||u||^k for a chi variable with d degrees of freedom
        m3 = math.exp(1.5 * math.log(2.0) + gammaln((d + 3) / 2) - gammaln(d / 2))
        m6 = float(d * (d + 2) * (d + 4))
    if dist.kind == "rademacher":
        sp = d ** (2.0 / p) if math.isfinite(p) else 1.0
    elif dist.kind == "gaussian":
        sp = float(d + 2)
    else:
        sp = float(d)
    return SmoothingMoments(m3=m3, m6=m6, sp=sp)


def _no_noise(rng, n):
    return [None] * n


@dataclass
class StochasticOracle:
    """Noisy objective values ``F(x, xi)`` plus a sampler for tokens ``xi``.

    ``sample(rng, n)`` returns ``n`` tokens as an object indexable by
    position.  ``value_batch(X, tokens)``, when provided, evaluates row ``j``
    of ``X`` with token ``j`` in one vectorised call; it must agree with
    ``value`` row by row.
    """

    value: Callable[[np.ndarray, Any], float]
    sample: Callable[[np.random.Generator, int], Sequence[Any]] = _no_noise
    value_batch: Optional[Callable[[np.ndarray, Sequence[Any]], np.ndarray]] = None

    def evaluate(self, points: np.ndarray, tokens: Sequence[Any]) -> np.ndarray:
        if self.value_batch is not None:
            vals = np.asarray(self.value_batch(points, tokens), dtype=float)
        else:
            vals = np.array([self.value(points[j], tokens[j]) for j in range(len(points))],
                            dtype=float)
        if not np.all(np.isfinite(vals)):
            raise EstimationError("value oracle returned a non-finite value")
        return vals


def two_point_estimate(oracle, x: np.ndarray, u: np.ndarray, xi: Any, nu: float) -> np.ndarray:
    """Forward-difference estimate along ``u`` using the same token at both points.

    ``oracle`` is a callable ``F(x, xi)`` or a :class:`StochasticOracle`.
    """
    if not nu > 0:
        raise ConfigError("smoothing radius nu must be positive", ["nu"])
    if isinstance(oracle, StochasticOracle):
        oracle = oracle.value
    f_plus = oracle(x + nu * u, xi)
    f_base = oracle(x, xi)
    if not (math.isfinite(f_plus) and math.isfinite(f_base)):
        raise EstimationError("value oracle returned a non-finite value")
    return (f_plus - f_base) / nu * u


def smoothed_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                      dist: DirectionDistribution, nu: float, trials: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo estimate of ``E_u[(f(x + nu u) - f(x)) / nu * u]``."""
    if trials < 1:
        raise ConfigError("trials must be >= 1", ["trials"])
    U = sample_direction(dist, rng, size=trials)
    f0 = f(x)
    diffs = np.array([f(x + nu * u) - f0 for u in U]) / nu
    return diffs @ U / trials


def mean_estimate(oracle: StochasticOracle, x: np.ndarray, dist: DirectionDistribution,
                  nu: float, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Average of ``trials`` independent two-point estimates (fresh ``u`` and ``xi``).

    Converges to the smoothed gradient of ``f = E[F]``; used where no
    deterministic objective is available.
    """
    U = sample_direction(dist, rng, size=trials)
    tokens = oracle.sample(rng, trials)
    X = np.broadcast_to(x, U.shape)
    diffs = (oracle.evaluate(X + nu * U, tokens) - oracle.evaluate(X, tokens)) / nu
    return diffs @ U / trials


@dataclass
class MomentState:
    s: Optional[np.ndarray] = None
    x_prev: Optional[np.ndarray] = None
    k: int = 0
    oracle_count: int = 0


def _batch_differences(oracle, x, U, tokens, nu):
    n = len(U)
    X = np.broadcast_to(x, (n, x.size))
    return (oracle.evaluate(X + nu * U, tokens) - oracle.evaluate(X, tokens)) / nu


def momentum_update(state: MomentState, oracle: StochasticOracle, x_new: np.ndarray,
                    dist: DirectionDistribution, nu: float, alpha: float, n: int,
                    rng: np.random.Generator, n0: Optional[int] = None,
                    per_sample_directions: bool = False) -> MomentState:
    """Advance the gradient surrogate to ``x_new``.

    At ``k = 0`` the surrogate is a plain average of ``n0`` estimates.  For
    ``k >= 1``::

        s_k = mean_j [ G(x_k; u, xi_j) + (1 - alpha) (s_{k-1} - G(x_{k-1}; u, xi_j)) ]

    with the same ``(u, xi_j)`` at both iterates.  By default one direction is
    shared by the whole batch; ``per_sample_directions`` draws one per token.

    Random draws happen in a fixed order: directions first, then tokens.
    """
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}", ["alpha"])
    if not nu > 0:
        raise ConfigError("smoothing radius nu must be positive", ["nu"])
    x_new = np.asarray(x_new, dtype=float)
    first = state.k == 0 or state.s is None
    batch = int(n0 if (first and n0 is not None) else n)
    if batch < 1:
        raise ConfigError("batch size must be >= 1", ["n0" if first else "n"])

    if batch <= CHUNK:
        g_new, g_old = _batch_gradients(oracle, x_new, None if first else state.x_prev, dist,
                                        batch, nu, rng, per_sample_directions)
    else:
        # bounded memory: draw and evaluate the batch in fixed-size chunks
        u_shared = None if per_sample_directions else sample_direction(dist, rng)
        g_new = np.zeros(dist.d)
        g_old = None if first else np.zeros(dist.d)
        for start in range(0, batch, CHUNK):
            size = min(CHUNK, batch - start)
            a, b = _batch_gradients(oracle, x_new, None if first else state.x_prev, dist, size,
                                    nu, rng, per_sample_directions, u_shared)
            g_new += a * (size / batch)
            if not first:
                g_old += b * (size / batch)

    if first:
        return MomentState(s=g_new, x_prev=x_new.copy(), k=1,
                           oracle_count=state.oracle_count + 2 * batch)
    s = g_new + (1.0 - alpha) * (state.s - g_old)
    return MomentState(s=s, x_prev=x_new.copy(), k=state.k + 1,
                       oracle_count=state.oracle_count + 4 * batch)


def _batch_gradients(oracle, x_new, x_old, dist, batch, nu, rng, per_sample, u_shared=None):
    """Mean two-point estimates at ``x_new`` and (optionally) ``x_old`` with shared draws."""
    if per_sample:
        U = sample_direction(dist, rng, size=batch)
    else:
        u = sample_direction(dist, rng) if u_shared is None else u_shared
        U = np.broadcast_to(u, (batch, dist.d))
    tokens = oracle.sample(rng, batch)
    g_new = _weighted_mean(_batch_differences(oracle, x_new, U, tokens, nu), U, per_sample)
    if x_old is None:
        return g_new, None
    g_old = _weighted_mean(_batch_differences(oracle, x_old, U, tokens, nu), U, per_sample)
    return g_new, g_old


def _weighted_mean(diffs, U, per_sample):
    if per_sample:
        return diffs @ U / len(diffs)
    return np.mean(diffs) * U[0]


def estimate_sp(dist: DirectionDistribution, p: float, trials: int,
                rng: np.random.Generator, n_random_probes: int = 10) -> float:
    """Monte-Carlo estimate of ``S_p = sup_g E||<g,u> u||_p^2 / ||g||_2^2``.

    The supremum is taken over the coordinate vectors plus
    ``n_random_probes`` random unit vectors; every probe shares the same
    direction sample.
    """
    if trials < 10_000:
        raise ConfigError("estimate_sp needs at least 1e4 trials", ["trials"])
    d = dist.d
    probes = rng.standard_normal((n_random_probes, d))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    probes = np.vstack([np.eye(d), probes])
    U = sample_direction(dist, rng, size=trials)
    unorm_sq = np.linalg.norm(U, ord=p, axis=1) ** 2
    inner_sq = (U @ probes.T) ** 2
    ratios = unorm_sq @ inner_sq / trials
    return float(ratios.max())

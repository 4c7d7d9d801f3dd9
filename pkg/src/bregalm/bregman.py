r"""Bregman geometry generated by :math:`v(x) = \tfrac12\|x\|_q^2`, and its proximal step.

The proximal subproblem solved at every iteration is

.. math::

    x^+ = \arg\min_{x \in X} \langle g, x\rangle + h(x) + \tfrac{1}{\eta} V(x_k, x),
    \qquad V(x, y) = v(y) - v(x) - \langle \nabla v(x), y - x\rangle,

with ``h`` either zero or a weighted l1 norm and ``X`` either the whole space
or a box.  Three solution paths are used:

* no ``h`` and no box: the closed-form inverse mirror map;
* ``q = 2``: soft-threshold then clip (the problem is separable);
* ``q < 2`` with ``h`` and/or a box: for fixed ``t = ||x||_q^{2-q}`` the
  problem splits into independent scalar problems with explicit solutions,
  and ``t`` itself is found by a bracketed scalar root-find on
  ``t = ||x(t)||_q^{2-q}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .exceptions import ConfigError, NumericalError

MAX_ROOT_ITER = 200


def conjugate_exponent(r: float) -> float:
    if r == 1.0:
        return math.inf
    if math.isinf(r):
        return 1.0
    return r / (r - 1.0)


@dataclass(frozen=True)
class BregmanGeometry:
    """Generator ``v(x) = scale * 0.5 * ||x||_q^2``.

    With ``scaled=True`` (the default) ``scale = 1/(q-1)``, which makes ``v``
    1-strongly convex in the l_q norm.  ``scaled=False`` keeps the raw
    ``0.5 * ||x||_q^2``, which is only ``(q-1)``-strongly convex.
    """

    q: float = 2.0
    scaled: bool = True

    def __post_init__(self):
        if not (1.0 < self.q <= 2.0):
            raise ConfigError(f"q must lie in (1, 2], got {self.q}", ["q"])

    @classmethod
    def from_p(cls, p: float, scaled: bool = True) -> "BregmanGeometry":
        if p < 2.0:
            raise ConfigError(f"p must be >= 2, got {p}", ["p"])
        return cls(q=conjugate_exponent(p), scaled=scaled)

    @property
    def p(self) -> float:
        return conjugate_exponent(self.q)

    @property
    def scale(self) -> float:
        return 1.0 / (self.q - 1.0) if self.scaled else 1.0

    @property
    def L_v(self) -> float:
        """Nominal smoothness constant of the generator in the l_q norm."""
        return self.scale

    @property
    def strong_convexity(self) -> float:
        return self.scale * (self.q - 1.0)

    def value(self, x):
        return self.scale * v_value(x, self.q)

    def grad(self, x):
        return self.scale * v_grad(x, self.q)

    def distance(self, x, y):
        return self.scale * bregman_distance(x, y, self.q)


@dataclass(frozen=True)
class NonsmoothSpec:
    """``h(x) = weight * ||x||_1`` (``weight = 0`` means no nonsmooth term)."""

    weight: float = 0.0

    def __post_init__(self):
        if not self.weight >= 0:
            raise ConfigError("l1 weight must be non-negative", ["lambda_h"])

    @property
    def is_zero(self) -> bool:
        return self.weight == 0.0

    def value(self, x) -> float:
        return self.weight * float(np.abs(x).sum())


@dataclass(frozen=True)
class FeasibleSet:
    """The whole space (both bounds ``None``) or a box ``lower <= x <= upper``."""

    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.lower is None) != (self.upper is None):
            raise ConfigError("box needs both lower and upper bounds", ["X"])
        if self.lower is not None:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ConfigError("box bounds must satisfy lower <= upper", ["X"])
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def whole_space(cls) -> "FeasibleSet":
        return cls()

    @classmethod
    def box(cls, lower, upper, d: Optional[int] = None) -> "FeasibleSet":
        if d is not None:
            lower = np.broadcast_to(np.asarray(lower, dtype=float), (d,)).copy()
            upper = np.broadcast_to(np.asarray(upper, dtype=float), (d,)).copy()
        return cls(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))

    @property
    def is_whole_space(self) -> bool:
        return self.lower is None

    def project(self, x):
        if self.is_whole_space:
            return np.asarray(x, dtype=float)
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        if self.is_whole_space:
            return True
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


def lq_norm(x, q: float) -> float:
    return float(np.linalg.norm(np.ravel(x), ord=q))


def v_value(x, q: float) -> float:
    return 0.5 * lq_norm(x, q) ** 2


def v_grad(x, q: float) -> np.ndarray:
    """Gradient of ``0.5 * ||x||_q^2``: ``sgn(x_i) |x_i|^(q-1) ||x||_q^(2-q)``; zero at the origin."""
    x = np.asarray(x, dtype=float)
    nrm = lq_norm(x, q)
    if nrm == 0.0:
        return np.zeros_like(x)
    if q == 2.0:
        return x.copy()
    return np.sign(x) * np.abs(x) ** (q - 1.0) * nrm ** (2.0 - q)


def bregman_distance(x, y, q: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return v_value(y, q) - v_value(x, q) - float(v_grad(x, q) @ (y - x))


def inverse_mirror_map(w, q: float) -> np.ndarray:
    """Solve ``grad v(x) = w`` for ``v = 0.5 ||.||_q^2``.

    Written the way the closed form is usually stated, with ``y = -w``::

        x = -sgn(y) |y|^(1/(q-1)) ||y||_p^((q-2)/(q-1))
    """
    y = -np.asarray(w, dtype=float)
    if q == 2.0:
        return -y
    p = conjugate_exponent(q)
    ny = lq_norm(y, p)
    if ny == 0.0:
        return np.zeros_like(y)
    return -np.sign(y) * np.abs(y) ** (1.0 / (q - 1.0)) * ny ** ((q - 2.0) / (q - 1.0))


def _soft(w, a):
    return np.sign(w) * np.maximum(np.abs(w) - a, 0.0)


def prox_step(x_k, g, eta: float, geom: BregmanGeometry, h: NonsmoothSpec = NonsmoothSpec(),
              X: FeasibleSet = FeasibleSet()) -> np.ndarray:
    """Minimiser of ``<g, x> + h(x) + V(x_k, x) / eta`` over ``X``."""
    if not eta > 0:
        raise ConfigError(f"step size eta must be positive, got {eta}", ["eta"])
    x_k = np.asarray(x_k, dtype=float)
    g = np.asarray(g, dtype=float)
    q = geom.q
    # Dividing the objective by the generator scale turns it into the
    # unscaled problem with step eta / scale.
    step = eta / geom.scale
    w = v_grad(x_k, q) - step * g
    a = step * h.weight

    if h.is_zero and X.is_whole_space:
        return inverse_mirror_map(w, q)
    if q == 2.0:
        return X.project(_soft(w, a))
    return _coupled_separable_solve(w, a, q, X, x_k - step * g)


def _coupled_separable_solve(w, a, q, X, guess):
    wbar = _soft(w, a)
    mag = np.abs(wbar)
    sgn = np.sign(wbar)
    expo = 1.0 / (q - 1.0)

    def x_of(t):
        # tiny t overflows to inf before clipping; that is harmless here
        with np.errstate(over="ignore"):
            return X.project(sgn * (mag / t) ** expo)

    def phi(t):
        return lq_norm(x_of(t), q) ** (2.0 - q) - t

    if not np.any(mag > 0):
        return X.project(np.zeros_like(w))

    t_hi = lq_norm(guess, q) ** (2.0 - q) + 1.0
    for _ in range(MAX_ROOT_ITER):
        if phi(t_hi) < 0:
            break
        t_hi *= 2.0
    else:
        raise NumericalError("could not bracket the norm self-consistency root",
                             residual=phi(t_hi))
    t_lo = 0.5 * t_hi
    for _ in range(MAX_ROOT_ITER * 5):
        if phi(t_lo) > 0:
            break
        t_lo *= 0.5
        if t_lo < 1e-300:
            # every active coordinate is pinned at a zero bound
            return x_of(t_hi)
    else:
        raise NumericalError("could not bracket the norm self-consistency root",
                             residual=phi(t_lo))
    t_star, info = brentq(phi, t_lo, t_hi, xtol=1e-300, rtol=1e-13,
                          maxiter=MAX_ROOT_ITER, full_output=True, disp=False)
    if not info.converged:
        raise NumericalError("norm self-consistency root-find did not converge",
                             residual=phi(t_star))
    return x_of(t_star)

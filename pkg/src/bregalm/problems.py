"""Benchmark problems: a box-constrained Lasso with a nonconvex equality, and
synthetic quadratic programs with a known KKT pair.

Instances are saved as a directory of CSV files plus a ``meta.txt`` of
``key=value`` lines; floats are written with 17 significant digits so a
write/read cycle is bit exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .alm import KnownConstants, ProblemSpec
from .bregman import FeasibleSet, NonsmoothSpec
from .estimator import StochasticOracle
from .exceptions import ConfigError

FLOAT_FMT = "%.17g"
BENCHMARK_SIZES = ((20, 500), (20, 1000), (100, 5000), (100, 10000))


@dataclass
class LassoInstance:
    """``min_{|x_i| <= 1} 0.5 ||Ax - b||^2 + lambda_h ||x||_1  s.t.  sum x_i^2 cos x_i = c_target``."""

    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    c_target: float
    lambda_h: float = 0.1
    noise_std: float = 0.01
    sparsity: float = 0.05
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def f(self, x) -> float:
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def grad_f(self, x) -> np.ndarray:
        return self.A.T @ (self.A @ x - self.b)

    def objective(self, x) -> float:
        return self.f(x) + self.lambda_h * float(np.abs(x).sum())

    def constraint(self, x) -> np.ndarray:
        return np.array([float(np.sum(x * x * np.cos(x))) - self.c_target])

    def constraint_jac(self, x) -> np.ndarray:
        return (2.0 * x * np.cos(x) - x * x * np.sin(x))[None, :]

    def oracle(self, row_batch: Optional[int] = None) -> StochasticOracle:
        """Row-subsampling oracle ``F(x; xi) = (m/|xi|) 0.5 sum_{i in xi} (a_i^T x - b_i)^2``.

        Rows are drawn uniformly with replacement; ``row_batch=None`` or
        ``row_batch >= m`` gives the exact (noise-free) objective.
        """
        A, b, m = self.A, self.b, self.m
        if row_batch is None or row_batch >= m:
            def value(x, xi):
                r = A @ x - b
                return 0.5 * float(r @ r)

            def value_batch(X, tokens):
                R = X @ A.T - b
                return 0.5 * np.einsum("ij,ij->i", R, R)

            return StochasticOracle(value=value, value_batch=value_batch)

        scale = m / row_batch

        def sample(rng, n):
            return rng.integers(0, m, size=(n, row_batch))

        def value(x, xi):
            r = A[xi] @ x - b[xi]
            return 0.5 * scale * float(r @ r)

        def value_batch(X, tokens):
            R = X @ A.T - b
            Rs = np.take_along_axis(R, np.asarray(tokens), axis=1)
            return 0.5 * scale * np.einsum("ij,ij->i", Rs, Rs)

        return StochasticOracle(value=value, sample=sample, value_batch=value_batch)

    def to_problem(self, row_batch: Optional[int] = None) -> ProblemSpec:
        d = self.d
        return ProblemSpec(d=d, oracle=self.oracle(row_batch), constraints=self.constraint,
                           jacobian=self.constraint_jac, m=1,
                           h=NonsmoothSpec(self.lambda_h), X=FeasibleSet.box(-1.0, 1.0, d=d),
                           f=self.f, grad_f=self.grad_f)


def gen_constrained_lasso(m: int, d: int, sparsity: float = 0.05, noise_std: float = 0.01,
                          lambda_h: float = 0.1, rng=None) -> LassoInstance:
    """Random instance: Gaussian ``A``, sparse ``x_star`` uniform on [-1, 1], ``b = A x_star + e``.

    ``rng`` may be a seed or a ``numpy.random.Generator``.  Draw order is
    ``A``, support, nonzero values, noise.
    """
    bad = []
    if int(m) < 1:
        bad.append("m")
    if int(d) < 3:
        bad.append("d")
    if not (0.0 < sparsity <= 1.0):
        bad.append("sparsity")
    if not noise_std >= 0:
        bad.append("noise_std")
    if not lambda_h >= 0:
        bad.append("lambda_h")
    if bad:
        raise ConfigError(f"invalid Lasso parameters: {', '.join(bad)}", bad)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    A = rng.standard_normal((m, d))
    k = int(math.ceil(sparsity * d))
    support = rng.choice(d, size=k, replace=False)
    x_star = np.zeros(d)
    x_star[support] = rng.uniform(-1.0, 1.0, size=k)
    e = noise_std * rng.standard_normal(m)
    b = A @ x_star + e
    c_target = float(np.sum(x_star ** 2 * np.cos(x_star)))
    return LassoInstance(A=A, b=b, x_star=x_star, c_target=c_target, lambda_h=lambda_h,
                         noise_std=noise_std, sparsity=sparsity,
                         seed=None if seed is None else int(seed))


_META_FLOATS = ("c_target", "lambda_h", "noise_std", "sparsity")


def save_instance(inst: LassoInstance, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savetxt(path / "A.csv", inst.A, delimiter=",", fmt=FLOAT_FMT)
    np.savetxt(path / "b.csv", inst.b, delimiter=",", fmt=FLOAT_FMT)
    np.savetxt(path / "x_star.csv", inst.x_star, delimiter=",", fmt=FLOAT_FMT)
    lines = [f"m={inst.m}", f"d={inst.d}", f"seed={'' if inst.seed is None else inst.seed}"]
    lines += [f"{key}={FLOAT_FMT % getattr(inst, key)}" for key in _META_FLOATS]
    (path / "meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_kv(path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed line in {path}: {raw!r}", [str(path)])
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_instance(path) -> LassoInstance:
    path = Path(path)
    meta = read_kv(path / "meta.txt")
    m, d = int(meta["m"]), int(meta["d"])
    A = np.loadtxt(path / "A.csv", delimiter=",", ndmin=2).reshape(m, d)
    b = np.loadtxt(path / "b.csv", delimiter=",", ndmin=1).reshape(m)
    x_star = np.loadtxt(path / "x_star.csv", delimiter=",", ndmin=1).reshape(d)
    return LassoInstance(A=A, b=b, x_star=x_star, c_target=float(meta["c_target"]),
                         lambda_h=float(meta["lambda_h"]), noise_std=float(meta["noise_std"]),
                         sparsity=float(meta["sparsity"]),
                         seed=int(meta["seed"]) if meta.get("seed") else None)


@dataclass
class SyntheticKkt:
    """Strongly convex quadratic with affine equalities and a certified KKT pair."""

    problem: ProblemSpec
    x_star: np.ndarray
    lambda_star: np.ndarray
    Q: np.ndarray
    q_lin: np.ndarray
    B: np.ndarray
    z: np.ndarray


def gen_synthetic_kkt(d: int, m: int, rng=None, sigma: float = 0.1, radius: float = 1.0,
                      curvature: Tuple[float, float] = (0.5, 1.0),
                      grad_scale: float = 1.0, max_tries: int = 20) -> SyntheticKkt:
    """Build ``f(x) = 0.5 x^T Q x + q^T x``, ``c(x) = Bx - z`` and a KKT pair by construction.

    ``Q`` has eigenvalues uniform in ``curvature``; ``B`` has orthonormal rows;
    ``x_star`` sits strictly inside the box ``[-radius, radius]^d`` and
    ``lambda_star`` is scaled so that ``||grad f(x_star)||_2 = grad_scale *
    radius``.  The noisy oracle adds ``<xi, x>`` with
    ``xi ~ N(0, sigma^2/d I)``, so the gradient noise variance is ``sigma^2``.
    Rank-deficient draws of ``B`` are redrawn.
    """
    if not (0 <= m < d):
        raise ConfigError("need 0 <= m < d", ["m"])
    if int(d) < 3:
        raise ConfigError("d must be >= 3", ["d"])
    rng = np.random.default_rng(rng)
    lo, hi = curvature
    M = np.linalg.qr(rng.standard_normal((d, d)))[0]
    Q = (M * rng.uniform(lo, hi, size=d)) @ M.T
    Q = 0.5 * (Q + Q.T)
    for _ in range(max_tries):
        G = rng.standard_normal((m, d))
        if m == 0 or np.linalg.matrix_rank(G) == m:
            break
    else:
        raise ConfigError("could not draw a full-rank constraint matrix", ["m"])
    B = np.linalg.qr(G.T)[0].T if m else np.zeros((0, d))
    x_star = rng.uniform(-0.5 * radius, 0.5 * radius, size=d)
    lam_dir = rng.standard_normal(m)
    lam_star = lam_dir * (grad_scale * radius / np.linalg.norm(lam_dir)) if m else np.zeros(0)
    q_lin = -Q @ x_star - B.T @ lam_star
    z = B @ x_star

    def f(x):
        return 0.5 * float(x @ Q @ x) + float(q_lin @ x)

    def grad_f(x):
        return Q @ x + q_lin

    noise_sd = sigma / math.sqrt(d)

    def sample(rng, n):
        return noise_sd * rng.standard_normal((n, d))

    def value(x, xi):
        return f(x) + float(xi @ x)

    def value_batch(X, tokens):
        return 0.5 * np.einsum("ij,jk,ik->i", X, Q, X) + X @ q_lin + np.einsum("ij,ij->i", tokens, X)

    box = FeasibleSet.box(-radius, radius, d=d)
    L_f = float(np.linalg.eigvalsh(Q).max())
    M_f = L_f * radius * math.sqrt(d) + float(np.linalg.norm(q_lin))
    F_bound = float(np.max(np.abs(B).sum(axis=1) * radius + np.abs(z))) if m else 0.0
    C0 = -0.5 * float(q_lin @ np.linalg.solve(Q, q_lin))
    x0 = np.linalg.lstsq(B, z, rcond=None)[0] if m else np.zeros(d)
    constants = KnownConstants(L_f=L_f, M_f=M_f, M_h=0.0, M_c=1.0 if m else 0.0, L_c=0.0,
                               F_bound=F_bound, sigma=sigma, beta=1.0, C0=C0,
                               C_i=-F_bound)
    problem = ProblemSpec(
        d=d, oracle=StochasticOracle(value=value, sample=sample, value_batch=value_batch),
        constraints=(lambda x: B @ x - z) if m else None,
        jacobian=(lambda x: B) if m else None, m=m, X=box, f=f, grad_f=grad_f,
        constants=constants, x0=x0)
    return SyntheticKkt(problem=problem, x_star=x_star, lambda_star=lam_star, Q=Q,
                        q_lin=q_lin, B=B, z=z)

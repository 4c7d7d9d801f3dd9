"""
Bregman geometry of the l_q generator
=====================================

The solver measures distances with ``V(x, y)`` generated by
``v(x) = 0.5 ||x||_q^2 / (q - 1)``.  This script shows how the proximal
step changes with q and checks the constants the analysis relies on.
"""

import numpy as np

from bregalm import (BregmanGeometry, DirectionDistribution, FeasibleSet, NonsmoothSpec,
                     bregman_distance, estimate_sp, prox_step, v_grad, v_value)

rng = np.random.default_rng(0)

# A gradient step in Euclidean geometry moves every coordinate by eta * g.
# Smaller q pushes mass onto the coordinates with the largest gradient.
x = np.zeros(6)
g = np.array([3.0, 1.0, 0.5, -0.2, 0.1, 0.0])
for q in (2.0, 1.6, 1.2):
    step = prox_step(x, g, 0.1, BregmanGeometry(q))
    print(f"q={q}: step = {np.round(step, 4)}")

# With an l1 term and a box the step soft-thresholds and clips.
box = FeasibleSet.box(-1.0, 1.0, d=6)
step = prox_step(x, g, 0.5, BregmanGeometry(1.5), NonsmoothSpec(0.5), box)
print("q=1.5 with l1 weight 0.5 and box [-1, 1]:", np.round(step, 4))

# The distance is (q - 1)-strongly convex in l_q before scaling.
y = rng.standard_normal(6)
z = rng.standard_normal(6)
q = 1.5
lhs = bregman_distance(y, z, q)
rhs = (q - 1) / 2 * np.sum(np.abs(z - y) ** q) ** (2 / q)
print(f"V(y, z) = {lhs:.4f} >= (q-1)/2 ||z - y||_q^2 = {rhs:.4f}")

# Unit smoothness of 0.5 ||x||_q^2 fails for q < 2: a small step off an axis
# gives a second-order excess larger than 0.5 ||step||_q^2.
a, b = np.array([1.0, 0.0]), np.array([1.0, 1e-3])
excess = v_value(b, q) - v_value(a, q) - v_grad(a, q) @ (b - a)
print(f"excess {excess:.3e} vs 0.5||b-a||_q^2 = {0.5 * 1e-3 ** 2:.3e}")

# The variance constant S_p of Rademacher smoothing is d^(2/p), so large p
# removes most of the dimension dependence.
for p in (2.0, 4.0, 8.0):
    est = estimate_sp(DirectionDistribution("rademacher", 64), p, 100_000, rng)
    print(f"d=64 p={p}: S_p estimate {est:.2f}, exact {64 ** (2 / p):.2f}")

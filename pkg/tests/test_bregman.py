import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bregalm import (BregmanGeometry, ConfigError, FeasibleSet, NonsmoothSpec, NumericalError,
                     bregman_distance, inverse_mirror_map, prox_step, v_grad, v_value)
from bregalm import bregman as bregman_mod
from oracles import brute_force_prox, half_sq_grad, lq

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
qs = st.sampled_from([1.1, 1.2, 1.5, 1.8, 2.0])


def vec(d):
    return arrays(np.float64, d, elements=finite)


# -- generator ------------------------------------------------------------------

def test_v_grad_euclidean(rng):
    x = rng.standard_normal(6)
    assert np.array_equal(v_grad(x, 2.0), x)


@pytest.mark.parametrize("q", [1.1, 1.5, 2.0])
def test_v_grad_at_origin(q):
    assert np.array_equal(v_grad(np.zeros(4), q), np.zeros(4))


def test_v_grad_hand_value():
    g = v_grad(np.array([1.0, 1.0]), 1.5)
    assert np.allclose(g, 2 ** (1 / 3), rtol=1e-14)
    h = 1e-6
    fd = (v_value(np.array([1 + h, 1.0]), 1.5) - v_value(np.array([1 - h, 1.0]), 1.5)) / (2 * h)
    assert fd == pytest.approx(2 ** (1 / 3), rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(q=qs, x=vec(4))
def test_v_grad_matches_chain_rule(q, x):
    assert np.allclose(v_grad(x, q), half_sq_grad(x, q), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(q=qs, seed=st.integers(0, 2 ** 32 - 1))
def test_v_grad_finite_difference(q, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.2, 2.0, 5) * rng.choice([-1, 1], 5)
    h = 1e-6
    fd = np.array([(v_value(x + h * e, q) - v_value(x - h * e, q)) / (2 * h) for e in np.eye(5)])
    assert np.allclose(v_grad(x, q), fd, rtol=1e-6, atol=1e-7)


def test_geometry_exponents():
    for q in (1.1, 1.25, 1.5, 2.0):
        g = BregmanGeometry(q)
        assert 1 / g.p + 1 / g.q == pytest.approx(1.0, abs=1e-15)
        assert g.p >= 2
    assert BregmanGeometry.from_p(4.0).q == pytest.approx(4 / 3)


@pytest.mark.parametrize("q", [1.0, 0.5, 2.5])
def test_geometry_rejects_bad_q(q):
    with pytest.raises(ConfigError):
        BregmanGeometry(q)


def test_scaled_geometry_constants():
    g = BregmanGeometry(1.5)
    assert g.scale == pytest.approx(2.0)
    assert g.strong_convexity == pytest.approx(1.0)
    assert BregmanGeometry(1.5, scaled=False).strong_convexity == pytest.approx(0.5)


def test_box_bounds_checked():
    with pytest.raises(ConfigError):
        FeasibleSet.box(np.ones(3), np.zeros(3))
    with pytest.raises(ConfigError):
        FeasibleSet(lower=np.zeros(2))


def test_negative_l1_weight_rejected():
    with pytest.raises(ConfigError):
        NonsmoothSpec(-0.1)


# -- distance -------------------------------------------------------------------

def test_distance_euclidean(rng):
    x, y = rng.standard_normal(5), rng.standard_normal(5)
    assert bregman_distance(x, y, 2.0) == pytest.approx(0.5 * np.sum((y - x) ** 2), rel=1e-12)


@pytest.mark.parametrize("q", [1.2, 1.5, 2.0])
def test_distance_to_self_is_zero(q, rng):
    x = rng.standard_normal(4)
    assert abs(bregman_distance(x, x, q)) <= 1e-14


def test_distance_hand_case():
    q = 1.5
    x, y = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    # v(y) - v(x) - <grad v(x), y - x> with grad v(x) = (1, 0)
    assert bregman_distance(x, y, q) == pytest.approx(1.0, abs=1e-15)
    assert bregman_distance(x, y, q) >= (q - 1) / 2 * lq(y - x, q) ** 2


@settings(max_examples=200, deadline=None)
@given(q=qs, x=vec(3), y=vec(3))
def test_distance_strong_convexity(q, x, y):
    assert bregman_distance(x, y, q) >= (q - 1) / 2 * lq(y - x, q) ** 2 - 1e-10


# -- mirror map ----------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(q=qs, w=vec(4))
def test_inverse_mirror_map_inverts_gradient(q, w):
    x = inverse_mirror_map(w, q)
    assert np.allclose(half_sq_grad(x, q), w, rtol=1e-9, atol=1e-9)


# -- prox ----------------------------------------------------------------------

def test_euclidean_prox_is_gradient_step(rng):
    x, g = rng.standard_normal(5), rng.standard_normal(5)
    out = prox_step(x, g, 0.3, BregmanGeometry(2.0))
    assert np.allclose(out, x - 0.3 * g, rtol=1e-15, atol=1e-15)


@pytest.mark.parametrize("q", [1.2, 1.5, 2.0])
def test_prox_returns_origin_when_linear_term_cancels(q, rng):
    geom = BregmanGeometry(q)
    x, eta = rng.standard_normal(4), 0.2
    out = prox_step(x, geom.grad(x) / eta, eta, geom)
    assert np.max(np.abs(out)) <= 1e-12


def test_prox_matches_brute_force_box_l1():
    rng = np.random.default_rng(2024)
    geom = BregmanGeometry(1.5)
    x_k = rng.uniform(-1, 1, 3)
    g = rng.standard_normal(3)
    out = prox_step(x_k, g, 0.2, geom, NonsmoothSpec(0.1), FeasibleSet.box(-1, 1, d=3))
    ref = brute_force_prox(x_k, g, 0.2, 1.5, scale=geom.scale, weight=0.1, lower=-1, upper=1)
    assert np.max(np.abs(out - ref)) <= 1e-6


def test_prox_rejects_non_positive_step():
    with pytest.raises(ConfigError):
        prox_step(np.zeros(3), np.ones(3), 0.0, BregmanGeometry(1.5))


def test_unscaled_geometry_uses_raw_generator(rng):
    x, g = rng.standard_normal(4), rng.standard_normal(4)
    raw = BregmanGeometry(1.5, scaled=False)
    ref = brute_force_prox(x, g, 0.1, 1.5, scale=1.0)
    assert np.max(np.abs(prox_step(x, g, 0.1, raw) - ref)) <= 1e-6


@pytest.mark.parametrize("q", [1.2, 1.5, 1.8])
def test_closed_form_agrees_with_coupled_path(q):
    rng = np.random.default_rng(int(q * 10))
    for _ in range(30):
        d = int(rng.integers(1, 6))
        x, g, eta = rng.standard_normal(d), rng.standard_normal(d), rng.uniform(0.05, 1.0)
        geom = BregmanGeometry(q)
        step = eta / geom.scale
        w = v_grad(x, q) - step * g
        closed = prox_step(x, g, eta, geom)
        coupled = bregman_mod._coupled_separable_solve(w, 0.0, q, FeasibleSet(), x - step * g)
        assert np.max(np.abs(closed - coupled)) <= 1e-8


def _subgradient_certificate(x_plus, x_k, g, eta, geom, weight, X, probes):
    """Min over a valid l1 subgradient choice of <g + z + (grad v(x+) - grad v(x_k))/eta, x - x+>."""
    base = g + (geom.grad(x_plus) - geom.grad(x_k)) / eta
    nz = x_plus != 0
    zeta = np.where(nz, weight * np.sign(x_plus), np.clip(-base, -weight, weight))
    r = base + zeta
    return min(float(r @ (p - x_plus)) for p in probes)


@settings(max_examples=60, deadline=None)
@given(q=st.sampled_from([1.2, 1.5, 1.8, 2.0]), seed=st.integers(0, 2 ** 32 - 1),
       weight=st.sampled_from([0.0, 0.05, 0.5]))
def test_prox_optimality_certificate(q, seed, weight):
    rng = np.random.default_rng(seed)
    d = 3
    X = FeasibleSet.box(-1.0, 1.0, d=d)
    geom = BregmanGeometry(q)
    x_k = rng.uniform(-1, 1, d)
    g = 3 * rng.standard_normal(d)
    eta = rng.uniform(0.05, 1.0)
    x_plus = prox_step(x_k, g, eta, geom, NonsmoothSpec(weight), X)
    assert X.contains(x_plus, tol=1e-12)
    vertices = [np.array(v) for v in itertools.product([-1.0, 1.0], repeat=d)]
    probes = vertices + list(rng.uniform(-1, 1, (100, d)))
    assert _subgradient_certificate(x_plus, x_k, g, eta, geom, weight, X, probes) >= -1e-8


def test_zero_soft_threshold_lands_on_origin():
    geom = BregmanGeometry(1.5)
    out = prox_step(np.zeros(3), np.array([0.01, -0.01, 0.0]), 0.1, geom, NonsmoothSpec(1.0),
                    FeasibleSet.box(-1, 1, d=3))
    assert np.array_equal(out, np.zeros(3))


def test_root_find_failure_is_reported(monkeypatch):
    class Info:
        converged = False

    monkeypatch.setattr(bregman_mod, "brentq",
                        lambda f, a, b, **kw: (0.5 * (a + b), Info()))
    with pytest.raises(NumericalError) as err:
        prox_step(np.array([0.3, -0.2, 0.9]), np.array([1.0, 2.0, -1.0]), 0.1,
                  BregmanGeometry(1.5), NonsmoothSpec(0.1), FeasibleSet.box(-1, 1, d=3))
    assert np.isfinite(err.value.residual)


# -- smoothness facts ----------------------------------------------------------

def test_unit_smoothness_fails_below_two():
    """0.5||.||_q^2 is not 1-smooth in l_q for q < 2: a small orthogonal step breaks it."""
    q = 1.5
    x = np.array([1.0, 0.0])
    y = np.array([1.0, 1e-3])
    excess = v_value(y, q) - v_value(x, q) - float(v_grad(x, q) @ (y - x)) \
        - 0.5 * lq(y - x, q) ** 2
    assert excess > 0


@settings(max_examples=200, deadline=None)
@given(p=st.sampled_from([2.0, 3.0, 4.0, 8.0]), x=vec(4), y=vec(4))
def test_lp_square_smoothness(p, x, y):
    nx = lq(x, p)
    grad = 2 * half_sq_grad(x, p) if nx > 0 else np.zeros_like(x)
    lhs = lq(x + y, p) ** 2
    rhs = nx ** 2 + float(grad @ y) + (p - 1) * lq(y, p) ** 2
    assert lhs <= rhs + 1e-10 * max(1.0, rhs)

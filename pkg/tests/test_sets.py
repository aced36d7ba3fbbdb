import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixtensor.exceptions import ContractViolation
from mixtensor.fgm import gradient_mapping
from mixtensor.sets import Box, EuclideanBall, ProductSet, WholeSpace, set_from_dict

SETS = [WholeSpace(2), EuclideanBall([0.5, -0.5], 1.5), Box([-1.0, 0.0], [1.0, 2.0])]
vec2 = st.lists(st.floats(-20, 20), min_size=2, max_size=2).map(np.array)


def test_contains_examples():
    assert WholeSpace(2).contains([1e300, -3.0])
    assert not EuclideanBall([0, 0], 1).contains([2.0, 0.0])
    assert Box([0, 0], [1, 1]).contains([0.5, 1.0])
    with pytest.raises(ContractViolation):
        EuclideanBall([0, 0], 1).contains([1.0, 0.0, 0.0])


def test_project_examples():
    assert np.allclose(EuclideanBall([0, 0], 1).project([2.0, 0.0]), [1.0, 0.0])
    box = Box([0, 0], [1, 1])
    assert np.array_equal(box.project([0.3, 0.6]), [0.3, 0.6])
    assert np.allclose(EuclideanBall([1, 1], 2).project([4.0, 1.0]), [3.0, 1.0])


def test_invalid_sets():
    with pytest.raises(ContractViolation):
        EuclideanBall([0, 0], 0.0)
    with pytest.raises(ContractViolation):
        Box([1.0], [0.0])
    with pytest.raises(ContractViolation):
        WholeSpace(0)


@settings(max_examples=200, deadline=None)
@given(vec2, vec2, st.sampled_from(range(len(SETS))))
def test_projection_nonexpansive_and_idempotent(x, y, k):
    Q = SETS[k]
    px, py = Q.project(x), Q.project(y)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) * (1 + 1e-12) + 1e-12
    assert np.allclose(Q.project(px), px, atol=1e-12)
    assert Q.contains(px)


def test_prox_linear_examples():
    x_hat, g = np.array([0.3, -0.4]), np.array([1.0, 2.0])
    assert np.allclose(WholeSpace(2).prox_linear_argmin(g, x_hat, 4.0), x_hat - g / 4.0)
    ball = EuclideanBall([0, 0], 1)
    assert np.allclose(ball.prox_linear_argmin(np.zeros(2), [3.0, 0.0], 2.0), [1.0, 0.0])
    assert np.allclose(ball.prox_linear_argmin([-3.0, 0.0], [0.0, 0.0], 1.0), [1.0, 0.0])
    with pytest.raises(ContractViolation):
        ball.prox_linear_argmin(g, x_hat, 0.0)


def test_gradient_mapping_examples():
    g = np.array([1.0, -2.0])
    x_q, g_q = gradient_mapping(WholeSpace(2), 0.0, g, np.array([0.5, 0.5]), 3.0)
    assert np.allclose(g_q, g)
    ball = EuclideanBall([0, 0], 1)
    _, g_q = gradient_mapping(ball, 0.0, np.zeros(2), np.array([0.2, 0.1]), 5.0)
    assert np.array_equal(g_q, [0.0, 0.0])
    x_q, g_q = gradient_mapping(ball, 0.0, np.array([-3.0, 0.0]), np.zeros(2), 1.0)
    assert np.allclose(x_q, [1.0, 0.0]) and np.allclose(g_q, 1.0 * (np.zeros(2) - x_q))


def _power_model(s, base, p):
    def val(y):
        return float(s @ y) + np.linalg.norm(y - base) ** (p + 1) / (p + 1)

    def grad(y):
        d = y - base
        return s + np.linalg.norm(d) ** (p - 1) * d

    return val, grad


def test_power_prox_examples():
    s = np.array([8.0, 0.0])
    y = WholeSpace(2).power_prox_argmin(s, np.zeros(2), 3)
    assert np.allclose(y, [-2.0, 0.0])
    assert np.allclose(np.linalg.norm(y) ** 2 * y + s, 0.0)
    assert np.allclose(EuclideanBall([0, 0], 1).power_prox_argmin(s, np.zeros(2), 3), [-1.0, 0.0])
    base = np.array([3.0, 4.0])
    ball = EuclideanBall([0, 0], 1)
    assert np.allclose(ball.power_prox_argmin(np.zeros(2), base, 3), ball.project(base))
    with pytest.raises(ContractViolation):
        ball.power_prox_argmin(s, base, 1)


@settings(max_examples=60, deadline=None)
@given(vec2, vec2, st.sampled_from(range(len(SETS))), st.sampled_from([2, 3]))
def test_power_prox_first_order_optimality(s, base, k, p):
    Q = SETS[k]
    y = Q.power_prox_argmin(s, base, p)
    assert Q.contains(y, 1e-9)
    _, grad = _power_model(s, base, p)
    g = grad(y)
    rng = np.random.default_rng(0)
    scale = max(1.0, np.linalg.norm(g))
    for _ in range(100):
        z = Q.project(y + 3.0 * rng.standard_normal(2))
        assert g @ (z - y) >= -1e-8 * scale * max(1.0, np.linalg.norm(z - y))


def test_min_norm_normal():
    ball = EuclideanBall([0, 0], 1)
    # on the boundary with the gradient pointing inward the normal cancels it
    v = ball.min_norm_normal([1.0, 0.0], np.array([-2.0, 1.0]))
    assert np.allclose(v, [2.0, 0.0])
    assert np.array_equal(ball.min_norm_normal([0.2, 0.0], np.array([-2.0, 1.0])), [0.0, 0.0])
    box = Box([0, 0], [1, 1])
    assert np.allclose(box.min_norm_normal([0.0, 1.0], np.array([1.0, -1.0])), [-1.0, 1.0])
    assert np.allclose(box.min_norm_normal([0.0, 1.0], np.array([-1.0, 1.0])), [0.0, 0.0])


def test_product_set_and_config():
    P = ProductSet(EuclideanBall([0, 0], 1), WholeSpace(1))
    assert P.dim == 3 and not P.is_compact
    assert np.allclose(P.project([2.0, 0.0, 7.0]), [1.0, 0.0, 7.0])
    Q = set_from_dict({"kind": "box", "lower": -1, "upper": 2}, 3)
    assert isinstance(Q, Box) and Q.diameter == pytest.approx(3 * np.sqrt(3))
    assert isinstance(set_from_dict({"kind": "ball", "radius": 2}, 2), EuclideanBall)
    assert isinstance(set_from_dict({}, 2), WholeSpace)
    with pytest.raises(ContractViolation):
        set_from_dict({"kind": "simplex"}, 2)

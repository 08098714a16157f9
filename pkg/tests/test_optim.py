import numpy as np
import pytest

from didipose.errors import ShapeError
from didipose.numerics import AdamWConfig, OptimizerState, Tensor, adamw_step


def params(rng):
    return {"w": Tensor(rng.normal(size=(3, 2)), requires_grad=True),
            "b": Tensor(rng.normal(size=(2,)), requires_grad=True)}


def test_zero_gradient_zero_decay_leaves_parameters():
    rng = np.random.default_rng(0)
    p = params(rng)
    before = {k: v.data.copy() for k, v in p.items()}
    state = OptimizerState(AdamWConfig(lr=1e-2, weight_decay=0.0))
    adamw_step(p, {k: np.zeros_like(v.data) for k, v in p.items()}, state)
    for k in p:
        assert np.array_equal(p[k].data, before[k])
    assert state.step == 1


def test_single_step_matches_hand_formula():
    cfg = AdamWConfig(lr=0.1, beta1=0.9, beta2=0.99, weight_decay=0.01, eps=1e-8)
    x0 = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.7, 0.0])
    p = {"x": Tensor(x0.copy(), requires_grad=True)}
    adamw_step(p, {"x": g}, OptimizerState(cfg))
    m_hat = (1 - 0.9) * g / (1 - 0.9)
    v_hat = (1 - 0.99) * g * g / (1 - 0.99)
    expected = x0 * (1 - 0.1 * 0.01) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(p["x"].data, expected, rtol=0, atol=1e-15)
    # With bias correction the first step is lr * sign(g) where g != 0.
    assert np.allclose((x0 * (1 - 0.001) - p["x"].data)[:2], 0.1 * np.sign(g[:2]), atol=1e-6)


def test_weight_decay_only_shrinks_multiplicatively():
    cfg = AdamWConfig(lr=0.05, weight_decay=0.2)
    x0 = np.array([2.0, -1.0])
    p = {"x": Tensor(x0.copy(), requires_grad=True)}
    state = OptimizerState(cfg)
    for k in range(1, 4):
        adamw_step(p, {"x": np.zeros(2)}, state)
        assert np.allclose(p["x"].data, x0 * (1 - 0.05 * 0.2) ** k)


def test_moments_match_shapes_and_step_counter_is_monotone():
    rng = np.random.default_rng(1)
    p = params(rng)
    state = OptimizerState(AdamWConfig())
    steps = []
    for _ in range(3):
        adamw_step(p, {k: rng.normal(size=v.shape) for k, v in p.items()}, state)
        steps.append(state.step)
    assert steps == [1, 2, 3]
    for k, v in p.items():
        assert state.m[k].shape == v.shape and state.v[k].shape == v.shape


def test_gradient_shape_mismatch():
    p = {"x": Tensor(np.zeros(3), requires_grad=True)}
    with pytest.raises(ShapeError):
        adamw_step(p, {"x": np.zeros(4)}, OptimizerState(AdamWConfig()))


def test_minimises_a_quadratic():
    p = {"x": Tensor(np.array([3.0, -4.0]), requires_grad=True)}
    state = OptimizerState(AdamWConfig(lr=0.1))
    for _ in range(300):
        adamw_step(p, {"x": 2 * p["x"].data}, state)
    assert np.abs(p["x"].data).max() < 1e-2

#!/usr/bin/env python3
"""
Test script for the spline couplings and the diffeomorphism stack
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from elcd import autodiff as ad
from elcd.errors import ConfigError, ShapeError
from elcd.flows import DiffeoStack, FlowConfig, InvertibleLinear, RQSpline, pad, unpad


def perturbed_stack(seed: int, dimension: int = 3, couplings: int = 2, scale: float = 0.3) -> DiffeoStack:
    """A stack whose every parameter has been moved away from the identity"""
    rng = np.random.default_rng(seed)
    stack = DiffeoStack(FlowConfig(dimension=dimension, couplings=couplings, hidden=8, bins=6, bound=5.0), rng)
    for param in stack.parameters():
        param.assign(param.data + rng.normal(scale=scale, size=param.shape))
    return stack


def test_fresh_stack_is_identity():
    stack = DiffeoStack(FlowConfig(dimension=4), np.random.default_rng(0))
    x = np.random.default_rng(1).normal(scale=3.0, size=(8, 4))
    assert np.allclose(stack.transform(x), x, atol=1e-12)
    assert np.allclose(stack.jacobian(x), np.broadcast_to(np.eye(4), (8, 4, 4)), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_inverse_round_trip(seed):
    stack = perturbed_stack(seed)
    x = np.random.default_rng(seed + 10).normal(scale=2.0, size=(20, 3))
    assert np.max(np.abs(stack.inverse(stack.transform(x)) - x)) <= 1e-10


@pytest.mark.parametrize("dimension", [2, 4, 8, 16])
def test_inverse_round_trip_on_a_dense_box(dimension):
    stack = perturbed_stack(dimension, dimension=dimension, scale=0.1)
    x = np.random.default_rng(dimension).uniform(-3.0, 3.0, size=(10_000, dimension))
    assert np.max(np.abs(stack.inverse(stack.transform(x)) - x)) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_forward_jacobian_matches_finite_differences(seed):
    stack = perturbed_stack(seed)
    x = np.random.default_rng(seed + 20).normal(size=3)
    jac = stack.jacobian(x)
    step = 1e-6
    numeric = np.stack([(stack.transform(x + step * e) - stack.transform(x - step * e)) / (2 * step)
                        for e in np.eye(3)], axis=1)
    assert np.allclose(jac, numeric, atol=1e-6)


def test_jacobian_is_invertible_and_gradients_flow():
    stack = perturbed_stack(7, dimension=2, couplings=1)
    x = ad.constant(np.random.default_rng(0).normal(size=(5, 2)))
    v = ad.constant(np.random.default_rng(1).normal(size=(5, 2)))
    params = stack.parameters()[:4]
    error = ad.finite_diff_check(lambda: ad.sum_(stack.pullback_velocity(x, v)), params)
    assert error <= 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_spline_is_monotone_with_identity_tails(seed):
    rng = np.random.default_rng(seed)
    spline = RQSpline(bins=8, bound=3.0)
    raw = rng.normal(size=spline.raw_size)
    x = np.linspace(-5.0, 5.0, 401)
    y, slopes = spline.forward(x, np.tile(raw, (x.size, 1)))
    assert np.all(np.diff(y) > 0)
    assert np.all(slopes > 0)
    outside = np.abs(x) > 3.0
    assert np.array_equal(y[outside], x[outside])
    assert y[0] == -5.0 and np.isclose(spline.forward(np.array([3.0]), raw[None])[0][0], 3.0)


def test_spline_with_zero_parameters_is_identity():
    spline = RQSpline()
    x = np.linspace(-9.5, 9.5, 39)
    y, slopes = spline.forward(x, np.zeros((x.size, spline.raw_size)))
    assert np.allclose(y, x, atol=1e-12)
    assert np.allclose(slopes, 1.0)


def test_spline_inverse():
    rng = np.random.default_rng(4)
    spline = RQSpline(bins=5, bound=2.0)
    raw = rng.normal(size=(50, spline.raw_size))
    x = rng.uniform(-3.0, 3.0, size=50)
    y, _ = spline.forward(x, raw)
    assert np.allclose(spline.inverse(y, raw), x, atol=1e-10)


def test_spline_config_validation():
    with pytest.raises(ConfigError):
        RQSpline(bins=1)
    with pytest.raises(ConfigError):
        RQSpline(bound=0.0)
    with pytest.raises(ShapeError):
        RQSpline(bins=4).knots(ad.constant(np.zeros(5)))


def test_invertible_linear_permutation():
    layer = InvertibleLinear("lin", 3, permutation=[2, 0, 1])
    x = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(layer.forward(ad.constant(x)).data, [[3.0, 1.0, 2.0]])
    layer.set_permutation([0, 1, 2])
    assert np.allclose(layer.forward(ad.constant(x)).data, x)
    with pytest.raises(ConfigError):
        layer.set_permutation([0, 0, 1])


def test_invertible_linear_diagonal():
    layer = InvertibleLinear("lin", 2)
    layer.set_matrix_diagonal([1.0, 4.0])
    assert np.allclose(layer.matrix().data, np.diag([1.0, 4.0]))
    assert np.allclose(layer.inverse(np.array([[2.0, 8.0]])), [[2.0, 2.0]])


def test_flow_config_validation():
    with pytest.raises(ConfigError):
        FlowConfig(dimension=1, couplings=1)
    with pytest.raises(ConfigError):
        FlowConfig(dimension=0)
    one = DiffeoStack(FlowConfig(dimension=1, couplings=0))
    assert len(one.layers) == 1


def test_stack_rejects_wrong_dimension():
    stack = DiffeoStack(FlowConfig(dimension=3))
    with pytest.raises(ShapeError):
        stack.forward(ad.constant(np.ones((2, 2))))


def test_pad_and_unpad():
    x = ad.constant(np.array([[1.0, 2.0]]))
    padded = pad(x, 4)
    assert np.array_equal(padded.data, [[1.0, 2.0, 0.0, 0.0]])
    assert np.array_equal(unpad(padded, 2).data, x.data)
    assert pad(x, 2) is x
    with pytest.raises(ShapeError):
        pad(x, 1)
    with pytest.raises(ShapeError):
        unpad(x, 3)


def main():
    """Run all tests"""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Test script for the reverse-mode engine and forward tangents
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from elcd import autodiff as ad
from elcd.autodiff import Dual, Parameter, backward, finite_diff_check, no_grad, tensor
from elcd.errors import ConfigError, ShapeError, SingularMatrixError
from elcd.networks import MLP, Adam

TOLERANCE = 1e-6


def _weighted(out, rng):
    weights = ad.constant(rng.normal(size=out.shape))
    return ad.sum_(out * weights)


UNARY = {
    "tanh": ad.tanh,
    "softplus": ad.softplus,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "square": ad.square,
    "neg": ad.neg,
    "softmax": ad.softmax,
    "cumsum": ad.cumsum,
    "transpose": ad.transpose,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(3))
def test_unary_gradients_match_finite_differences(name, seed):
    """Every elementwise and structural op agrees with central differences"""
    rng = np.random.default_rng(seed)
    x = tensor(rng.normal(size=(3, 4)), requires_grad=True)
    op = UNARY[name]
    assert finite_diff_check(lambda: _weighted(op(x), np.random.default_rng(seed)), [x]) <= TOLERANCE


@pytest.mark.parametrize("seed", range(3))
def test_positive_domain_gradients(seed):
    rng = np.random.default_rng(seed)
    x = tensor(rng.uniform(0.5, 2.0, size=(5,)), requires_grad=True)
    for op in (ad.sqrt, ad.log, ad.reciprocal):
        assert finite_diff_check(lambda: _weighted(op(x), np.random.default_rng(seed)), [x]) <= TOLERANCE


@pytest.mark.parametrize("seed", range(5))
def test_binary_gradients(seed):
    rng = np.random.default_rng(seed)
    a = tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = tensor(rng.uniform(0.5, 1.5, size=(2, 3)), requires_grad=True)

    def function():
        out = ad.add(a, b) * ad.sub(a, b) + ad.div(a, b) + ad.scale(a, 0.3) + ad.add_scalar(b, 2.0)
        return _weighted(out, np.random.default_rng(seed))

    assert finite_diff_check(function, [a, b]) <= TOLERANCE


@pytest.mark.parametrize("seed", range(5))
def test_matrix_gradients(seed):
    """matmul, matvec and linear_solve in their batched forms"""
    rng = np.random.default_rng(seed)
    m = tensor(rng.normal(size=(4, 3, 3)) + 3.0 * np.eye(3), requires_grad=True)
    w = tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = tensor(rng.normal(size=(4, 3)), requires_grad=True)

    def function():
        solved = ad.linear_solve(m, ad.matvec(m, x) + x)
        return _weighted(ad.matmul(solved, w), np.random.default_rng(seed)) + ad.sum_(ad.matmul(m, m))

    assert finite_diff_check(function, [m, w, x]) <= TOLERANCE


def test_structure_gradients():
    rng = np.random.default_rng(0)
    x = tensor(rng.normal(size=(3, 4)), requires_grad=True)
    index = np.array([0, 3, 2])

    def function():
        picked = ad.reshape(ad.take_last(x, index), (3, 1))
        pieces = ad.concat([ad.slice_(x, 0, 2), picked, ad.expand(ad.sum_(x, -1), -1, 1)])
        return _weighted(pieces, np.random.default_rng(1)) + ad.mean(ad.norm(x, axis=-1))

    assert finite_diff_check(function, [x]) <= TOLERANCE


def test_norm_subgradient_at_zero_is_zero():
    x = tensor(np.zeros((2, 3)), requires_grad=True)
    (grad,) = ad.gradients(ad.sum_(ad.norm(x)), [x])
    assert np.array_equal(grad, np.zeros((2, 3)))


def test_linear_solve_singular_matrix():
    """A rank-deficient matrix reports the failing pivot"""
    a = ad.constant(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError) as info:
        ad.linear_solve(a, ad.constant(np.ones(2)))
    assert info.value.pivot_index == 1


def test_linear_solve_matches_numpy():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 4, 4)) + 4.0 * np.eye(4)
    b = rng.normal(size=(5, 4))
    y = ad.linear_solve(ad.constant(a), ad.constant(b)).data
    assert np.allclose(np.einsum("bij,bj->bi", a, y), b, atol=1e-12)


def test_shape_errors_name_the_operation():
    with pytest.raises(ShapeError) as info:
        ad.add(ad.constant(np.ones(3)), ad.constant(np.ones(4)))
    assert "add" in str(info.value)
    with pytest.raises(ShapeError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 2))))


def test_backward_requires_scalar_loss():
    x = Parameter("x", np.ones(3))
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_backward_collects_named_parameters():
    w = Parameter("w", np.array([1.0, 2.0]))
    frozen = Parameter("frozen", np.array([3.0, 4.0]), trainable=False)
    grads = backward(ad.sum_(w * w * frozen))
    assert set(grads) == {"w"}
    assert np.allclose(grads["w"].data, 2.0 * w.data * frozen.data)
    assert grads.max_abs() == pytest.approx(16.0)


def test_duplicate_parameter_names_rejected():
    a = Parameter("same", np.ones(2))
    b = Parameter("same", np.ones(2))
    with pytest.raises(ConfigError):
        backward(ad.sum_(a * b))


def test_no_grad_skips_recording():
    w = Parameter("w", np.ones(2))
    with no_grad():
        out = w * 3.0
    assert not out.requires_grad
    assert out.parents == ()


def test_forward_tangents_match_reverse_jacobian():
    """Dual tangents through an MLP equal the reverse-mode Jacobian"""
    rng = np.random.default_rng(4)
    mlp = MLP("net", [3, 8, 8, 2], rng)
    x = rng.normal(size=(6, 3))
    reverse, values = ad.jacobian(mlp, x)
    out = mlp(Dual.seed(ad.constant(x)))
    assert np.allclose(out.jacobian().data, reverse, atol=1e-12)
    assert np.array_equal(out.value.data, values)


def test_dual_arithmetic_matches_tensor_values():
    rng = np.random.default_rng(5)
    x = ad.constant(rng.uniform(0.5, 1.5, size=(4, 3)))
    dual = Dual.seed(x)
    result = (dual * 2.0 - dual.square()) / (dual + 1.0)
    expected = ad.div(x * 2.0 - ad.square(x), x + 1.0)
    assert np.array_equal(result.value.data, expected.data)
    diagonal = (2.0 - 2.0 * x.data) / (x.data + 1.0) - (2.0 * x.data - x.data ** 2) / (x.data + 1.0) ** 2
    assert np.allclose(np.diagonal(result.jacobian().data, axis1=1, axis2=2), diagonal, atol=1e-12)


def test_adam_moves_against_gradient():
    w = Parameter("w", np.array([1.0, -1.0]))
    optimizer = Adam([w], lr=0.1)
    optimizer.step(backward(ad.sum_(ad.square(w))))
    assert np.allclose(w.data, [0.9, -0.9])


def main():
    """Run all tests"""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())

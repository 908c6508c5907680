#!/usr/bin/env python3
"""
Test script for the ELCD vector field
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from elcd import autodiff as ad
from elcd.config import slow_tests_enabled
from elcd.errors import ConfigError, ShapeError
from elcd.model import ElcdConfig, ElcdModel, LinearField, ModelKind, symmetric_max_eigenvalue
from elcd.rollout import IntegratorConfig
from elcd.verify import equilibrium_bound_check


def random_model(seed: int, dimension: int = 3, alpha: float = 0.05) -> ElcdModel:
    """ELCD with non-trivial P_s and P_a output layers"""
    rng = np.random.default_rng(seed)
    model = ElcdModel(ElcdConfig(dimension=dimension, alpha=alpha, hidden=8), rng,
                      equilibrium=rng.normal(size=dimension))
    for net in (model.p_s, model.p_a):
        final = net.mlp.final
        final.weight.assign(rng.normal(scale=0.5, size=final.weight.shape))
        final.bias.assign(rng.normal(scale=0.5, size=final.bias.shape))
    return model


def test_config_validation():
    with pytest.raises(ConfigError):
        ElcdConfig(dimension=2, alpha=0.0)
    with pytest.raises(ConfigError):
        ElcdConfig(dimension=0)
    assert ElcdConfig(dimension=4).to_dict()["alpha"] == 0.05


def test_model_kind_parse():
    assert ModelKind.parse("NCDS") is ModelKind.NCDS
    with pytest.raises(ConfigError):
        ModelKind.parse("gaussian-process")


@pytest.mark.parametrize("seed", range(20))
def test_symmetric_part_bounded_by_alpha(seed):
    """(A + A^T)/2 <= -alpha I at every sampled state"""
    model = random_model(seed)
    x = np.random.default_rng(100 + seed).normal(scale=3.0, size=(16, 3))
    top = symmetric_max_eigenvalue(model.a_matrix_numpy(x))
    assert np.all(top <= -model.config.alpha + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_equilibrium_is_exact_zero_inside_any_batch(seed):
    model = random_model(seed)
    rng = np.random.default_rng(seed)
    batch = rng.normal(size=(7, 3))
    batch[3] = model.equilibrium
    out = model.evaluate(batch)
    assert np.all(out[3] == 0.0)
    assert np.all(model.evaluate(model.equilibrium) == 0.0)


def test_zero_networks_give_uniform_decay():
    model = random_model(0, dimension=2, alpha=0.3)
    model.zero_networks_()
    x = np.random.default_rng(1).normal(size=(5, 2))
    assert np.allclose(model.a_matrix_numpy(x), -0.3 * np.eye(2))
    assert np.allclose(model.evaluate(x), -0.3 * (x - model.equilibrium), atol=1e-15)


def test_fresh_model_starts_near_uniform_decay():
    model = ElcdModel(ElcdConfig(dimension=2), np.random.default_rng(0))
    x = np.random.default_rng(2).normal(size=(10, 2))
    assert np.allclose(model.evaluate(x), -0.05 * x, atol=1e-3)


def test_wrong_input_dimension():
    model = random_model(0)
    with pytest.raises(ShapeError):
        model(ad.constant(np.ones((2, 4))))


@pytest.mark.parametrize("seed", range(3))
def test_parameter_gradients_match_finite_differences(seed):
    model = random_model(seed, dimension=2)
    rng = np.random.default_rng(seed)
    x = ad.constant(rng.normal(size=(4, 2)))
    weights = ad.constant(rng.normal(size=(4, 2)))
    function = lambda: ad.sum_(model(x) * weights)
    params = [model.p_s.mlp.final.weight, model.p_a.mlp.layers[0].weight, model.p_s.mlp.layers[1].bias]
    assert ad.finite_diff_check(function, params) <= 1e-6


def test_state_jacobian_matches_finite_differences():
    model = random_model(4)
    x = np.random.default_rng(5).normal(size=3)
    jac = model.jacobian(x)
    step = 1e-6
    numeric = np.stack([(model.evaluate(x + step * e) - model.evaluate(x - step * e)) / (2 * step)
                        for e in np.eye(3)], axis=1)
    assert np.allclose(jac, numeric, atol=1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_rollouts_respect_equilibrium_bound(seed):
    """||x(t) - x*|| <= e^{-alpha t} ||x(0) - x*|| along RK4 rollouts"""
    model = random_model(seed, dimension=2, alpha=0.5)
    x0s = model.equilibrium + np.random.default_rng(seed).normal(scale=2.0, size=(4, 2))
    check = equilibrium_bound_check(model, model.equilibrium, x0s, 0.5, IntegratorConfig(dt=1e-3, horizon=2.0))
    assert check.passed, check.value


@pytest.mark.skipif(not slow_tests_enabled(), reason="set ELCD_RUN_SLOW=1 for the full rollout sweep")
def test_rollout_bound_sweep():
    """100 random models, 10 rollouts each, T = 5"""
    config = IntegratorConfig(dt=1e-3, horizon=5.0)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        alpha = float(rng.uniform(0.05, 1.0))
        model = random_model(1000 + seed, dimension=int(rng.integers(2, 5)), alpha=alpha)
        x0s = model.equilibrium + rng.normal(scale=2.0, size=(10, model.dimension))
        check = equilibrium_bound_check(model, model.equilibrium, x0s, alpha, config)
        worst = max(worst, check.value)
    assert worst <= 1e-3


def test_linear_field():
    field = LinearField([[-1.0, 4.0], [0.0, -1.0]], equilibrium=[1.0, 1.0])
    assert np.allclose(field.evaluate([2.0, 1.0]), [-1.0, 0.0])
    assert np.allclose(field.jacobian(np.zeros((3, 2))), np.array([[-1.0, 4.0], [0.0, -1.0]]))
    velocity, jac = field.linearize(np.array([[1.0, 2.0]]))
    assert np.allclose(velocity, [[4.0, -1.0]])
    assert jac.shape == (1, 2, 2)


def test_learned_equilibrium_receives_gradient():
    rng = np.random.default_rng(0)
    model = ElcdModel(ElcdConfig(dimension=2, learn_equilibrium=True), rng)
    grads = ad.backward(ad.sum_(model(ad.constant(rng.normal(size=(3, 2))))))
    assert "elcd.equilibrium" in grads
    frozen = ElcdModel(ElcdConfig(dimension=2), rng)
    assert "elcd.equilibrium" not in ad.backward(ad.sum_(frozen(ad.constant(np.ones((1, 2))))))


def main():
    """Run all tests"""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Test script for converse metrics and the contraction checks
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from scipy.linalg import expm, solve_continuous_lyapunov

from elcd.datasets import TOY_MATRIX
from elcd.errors import ConfigError, ShapeError, VerificationError
from elcd.flows import DiffeoStack, FlowConfig
from elcd.model import ElcdConfig, ElcdModel, LinearField
from elcd.rollout import IntegratorConfig
from elcd.verify import (
    MetricConfig, contraction_check, converse_metric, converse_metrics, equilibrium_bound_check,
    lyapunov_oracle, metric_residual, pullback_metric, sample_box, variational_flow, verify_field,
)

# M A + A^T M = -I for the toy matrix, solved by hand
TOY_METRIC = np.array([[0.5, 1.0], [1.0, 4.5]])


def test_lyapunov_oracle_by_hand():
    assert np.allclose(lyapunov_oracle(TOY_MATRIX), TOY_METRIC)


@pytest.mark.parametrize("seed", range(4))
def test_lyapunov_oracle_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4)) - 6.0 * np.eye(4)
    cost = np.diag(rng.uniform(0.5, 2.0, size=4))
    expected = solve_continuous_lyapunov(a.T, -cost)
    assert np.allclose(lyapunov_oracle(a, cost), expected, atol=1e-10)


def test_lyapunov_oracle_rejects_unstable_matrix():
    with pytest.raises(VerificationError):
        lyapunov_oracle(np.array([[0.1, 0.0], [0.0, -1.0]]))
    with pytest.raises(ShapeError):
        lyapunov_oracle(np.ones((2, 3)))


def hurwitz_matrix(seed: int, dimension: int = 4) -> np.ndarray:
    """Symmetric part at most -1/2, so every eigenvalue has negative real part"""
    rng = np.random.default_rng(seed)
    b = rng.normal(scale=0.5, size=(dimension, dimension))
    s = rng.normal(scale=0.5, size=(dimension, dimension))
    return -(b @ b.T + 0.5 * np.eye(dimension)) + (s - s.T)


LINEAR_CASES = {
    "minus-identity": -np.eye(3),
    "shear": np.array([[-1.0, 1.0], [0.0, -1.0]]),
    "random-4d": hurwitz_matrix(5),
}


@pytest.mark.parametrize("case", sorted(LINEAR_CASES))
def test_converse_metric_matches_lyapunov_solution(case):
    a = LINEAR_CASES[case]
    d = a.shape[0]
    field = LinearField(a)
    config = MetricConfig(dt=5e-3, t_max=200.0)
    points = np.random.default_rng(0).normal(size=(3, d))
    expected = lyapunov_oracle(a)
    for sample in converse_metrics(field, points, config):
        assert np.max(np.abs(sample.metric - expected)) <= 1e-3 * np.max(np.abs(expected))
    residual = metric_residual(field, points, config=config)
    assert np.max(np.sqrt(np.sum(residual ** 2, axis=(1, 2)))) <= 1e-2


def test_converse_metric_of_minus_identity_is_half_identity():
    sample = converse_metric(LinearField(-np.eye(2)), np.array([1.0, -2.0]), MetricConfig(dt=1e-2, t_max=100.0))
    assert np.allclose(sample.metric, 0.5 * np.eye(2), rtol=1e-3)


def zero_network_elcd(alpha: float, dimension: int = 3) -> ElcdModel:
    rng = np.random.default_rng(3)
    model = ElcdModel(ElcdConfig(dimension=dimension, alpha=alpha, hidden=6), rng,
                      equilibrium=rng.normal(size=dimension))
    model.zero_networks_()
    return model


def test_metric_residual_of_uniform_decay():
    """f = -alpha (x - x*) with M = I / (2 alpha) solves the metric equation exactly"""
    alpha = 0.25
    model = zero_network_elcd(alpha)
    metric_fn = lambda x: np.eye(3) / (2.0 * alpha)
    points = np.random.default_rng(4).normal(scale=2.0, size=(6, 3))
    residual = metric_residual(model, points, metric_fn)
    assert np.max(np.abs(residual)) <= 1e-6


def test_contraction_rate_boundary_is_alpha():
    alpha = 0.25
    model = zero_network_elcd(alpha)
    metric_fn = lambda x: np.eye(3) / (2.0 * alpha)
    points = np.random.default_rng(5).normal(size=(6, 3))
    at_boundary = contraction_check(model, metric_fn, alpha, points)
    assert at_boundary.passed
    assert abs(at_boundary.value) <= 1e-8
    assert not contraction_check(model, metric_fn, 1.01 * alpha, points).passed


def test_variational_flow_is_matrix_exponential():
    times, states, mats = variational_flow(LinearField(TOY_MATRIX), np.array([0.0, 2.0]), dt=1e-2, horizon=1.0)
    assert times.shape == (101,)
    assert np.allclose(mats[-1], expm(TOY_MATRIX), atol=1e-8)
    assert np.allclose(states[-1], expm(TOY_MATRIX) @ [0.0, 2.0], atol=1e-8)


def test_converse_metric_of_linear_field_matches_oracle():
    sample = converse_metric(LinearField(TOY_MATRIX), np.array([0.3, -0.4]), MetricConfig(dt=1e-3))
    assert np.allclose(sample.metric, TOY_METRIC, rtol=1e-4, atol=1e-5)
    assert np.all(sample.eigenvalues > 0)
    assert 10.0 < sample.horizon < 50.0
    assert sample.tail_estimate < 1e-6


def test_converse_metric_of_expanding_field_fails():
    expanding = LinearField(np.eye(2))
    with pytest.raises(VerificationError) as info:
        converse_metrics(expanding, np.zeros((1, 2)), MetricConfig(dt=1e-2, t_max=2.0))
    assert info.value.residual_norm > 1.0
    report = verify_field(expanding, np.zeros((2, 2)), c=0.0, config=MetricConfig(dt=1e-2, t_max=2.0))
    assert not report.passed
    assert report.checks[-1].name == "converse metric"
    assert report.metric_bounds is None


def test_verify_field_with_converse_metric():
    field = LinearField(TOY_MATRIX)
    points = sample_box([-1.0, -1.0], [1.0, 1.0], 3, np.random.default_rng(0))
    report = verify_field(field, points, c=0.05, config=MetricConfig(dt=1e-2, t_max=60.0),
                          equilibrium=np.zeros(2), bound_x0s=[[0.0, 2.0]], rate=0.05,
                          bound_config=IntegratorConfig(dt=1e-2, horizon=5.0))
    names = [check.name for check in report.checks]
    assert names == ["equilibrium bound", "metric positive definite", "metric residual", "contraction (c=0.05)"]
    by_name = {check.name: check for check in report.checks}
    assert not by_name["equilibrium bound"].passed
    assert by_name["metric residual"].passed
    assert by_name["contraction (c=0.05)"].passed
    largest, smallest = report.metric_bounds
    assert largest == pytest.approx(4.736, abs=1e-2) and smallest == pytest.approx(0.264, abs=1e-2)
    assert report.achieved_rate == pytest.approx(1.0 / (2.0 * 4.7361), rel=1e-2)
    columns, rows = report.sample_rows()
    assert columns[:2] == ["x0", "x1"] and len(rows) == 3


def test_contraction_with_supplied_metric():
    field = LinearField(TOY_MATRIX)
    metric_fn = lambda x: TOY_METRIC
    points = np.random.default_rng(1).normal(size=(5, 2))
    passing = contraction_check(field, metric_fn, 0.05, points)
    assert passing.passed
    assert passing.value == pytest.approx(np.linalg.eigvalsh(-np.eye(2) + 0.1 * TOY_METRIC)[-1])
    failing = contraction_check(field, metric_fn, 0.2, points)
    assert not failing.passed
    identity = contraction_check(field, lambda x: np.eye(2), 0.0, points)
    assert not identity.passed
    assert np.allclose(metric_residual(field, points, metric_fn), 0.0, atol=1e-12)


def test_equilibrium_bound_check():
    field = LinearField(-np.eye(2), equilibrium=[1.0, -1.0])
    x0s = np.array([[2.0, 0.0], [0.0, -3.0]])
    config = IntegratorConfig(dt=1e-2, horizon=3.0)
    assert equilibrium_bound_check(field, [1.0, -1.0], x0s, 1.0, config).passed
    assert not equilibrium_bound_check(field, [1.0, -1.0], x0s, 1.5, config).passed
    at_rest = equilibrium_bound_check(field, [1.0, -1.0], [[1.0, -1.0]], 1.0, config)
    assert at_rest.passed and at_rest.value == 0.0


def test_equilibrium_bound_check_reports_divergence():
    check = equilibrium_bound_check(LinearField(np.array([[400.0]])), [0.0], [[1.0]], 0.1,
                                    IntegratorConfig(dt=0.1, horizon=100.0))
    assert not check.passed
    assert check.value == float("inf")


def test_pullback_through_identity_diffeo():
    diffeo = DiffeoStack(FlowConfig(dimension=2), np.random.default_rng(0))
    metric = pullback_metric(diffeo, lambda z: TOY_METRIC)
    assert np.allclose(metric(np.array([0.4, -1.1])), TOY_METRIC, atol=1e-12)


def test_sample_box_inflation():
    points = sample_box([0.0, 10.0], [1.0, 20.0], 500, np.random.default_rng(3))
    assert points.shape == (500, 2)
    assert np.all(points[:, 0] >= -0.5) and np.all(points[:, 0] <= 1.5)
    assert np.all(points[:, 1] >= 5.0) and np.all(points[:, 1] <= 25.0)
    assert points[:, 0].min() < 0.0 and points[:, 0].max() > 1.0


def test_metric_config_validation():
    with pytest.raises(ConfigError):
        MetricConfig(dt=0.0)
    assert MetricConfig(rate=0.5).horizon == 100.0
    assert MetricConfig(t_max=3.0).to_dict()["t_max"] == 3.0


def main():
    """Run all tests"""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())

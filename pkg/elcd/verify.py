"""
Sampled contraction diagnostics.

The converse metric is M(x) = int_0^inf Y(t)^T C(phi_t(x)) Y(t) dt where Y
solves the variational equation Y' = Df(phi_t(x)) Y, Y(0) = I. It is
computed by a composite trapezoid rule at the integrator step and truncated
once ||Y||_F falls below a tolerance. Checks report what was measured at the
sample points and nothing more.
"""

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh, eigvals, eigvalsh, solve

from .errors import ConfigError, NumericalError, ShapeError, VerificationError
from .integrators import integrate_array, rk4_step
from .rollout import IntegratorConfig

MetricFn = Callable[[np.ndarray], np.ndarray]
CostFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class MetricConfig:
    dt: float = 1e-3
    t_max: Optional[float] = None
    tail_tol: float = 1e-6
    rate: float = 0.05

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt", f"must be positive, got {self.dt}")
        if not self.tail_tol > 0:
            raise ConfigError("tail_tol", "must be positive")
        if not self.rate > 0:
            raise ConfigError("rate", "must be positive")

    @property
    def horizon(self) -> float:
        return self.t_max if self.t_max is not None else 50.0 / self.rate

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["t_max"] = self.horizon
        return data


@dataclass
class MetricSample:
    point: np.ndarray
    metric: np.ndarray
    horizon: float
    tail_estimate: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return eigvalsh(self.metric)


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""
    per_sample: Optional[np.ndarray] = None


@dataclass
class VerifyReport:
    checks: List[CheckResult] = field(default_factory=list)
    points: Optional[np.ndarray] = None
    metric_bounds: Optional[Tuple[float, float]] = None
    achieved_rate: Optional[float] = None
    settings: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def sample_rows(self) -> Tuple[List[str], List[List[float]]]:
        """Per-sample values of every check that has them, for CSV export."""
        if self.points is None:
            return [], []
        d = self.points.shape[1]
        columns = [f"x{i}" for i in range(d)]
        per_sample = [c for c in self.checks if c.per_sample is not None and len(c.per_sample) == len(self.points)]
        columns += [c.name for c in per_sample]
        rows = [list(self.points[i]) + [float(c.per_sample[i]) for c in per_sample] for i in range(len(self.points))]
        return columns, rows


def _identity_cost(states: np.ndarray) -> np.ndarray:
    d = states.shape[-1]
    return np.broadcast_to(np.eye(d), states.shape[:-1] + (d, d))


def _variational_steps(vector_field, x: np.ndarray, dt: float) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
    """Joint RK4 on (x, Y); yields (step, states, Y) forever, starting at step 0."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    batch, d = x.shape
    y = np.broadcast_to(np.eye(d), (batch, d, d)).copy()

    def rhs(xs, ys):
        velocity, jac = vector_field.linearize(xs)
        return velocity, np.einsum("bij,bjk->bik", jac, ys)

    step = 0
    yield step, x, y
    while True:
        k1x, k1y = rhs(x, y)
        k2x, k2y = rhs(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
        k3x, k3y = rhs(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
        k4x, k4y = rhs(x + dt * k3x, y + dt * k3y)
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        step += 1
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericalError("variational flow became non-finite", step=step)
        yield step, x, y


def variational_flow(vector_field, x, dt: float = 1e-3, horizon: float = 1.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, flowed states and sensitivity matrices at every step up to `horizon`."""
    steps = int(round(horizon / dt))
    single = np.asarray(x).ndim == 1
    states, mats = [], []
    for step, xs, ys in _variational_steps(vector_field, x, dt):
        states.append(xs[0] if single else xs)
        mats.append(ys[0] if single else ys)
        if step >= steps:
            break
    return np.arange(steps + 1) * dt, np.stack(states), np.stack(mats)


def converse_metrics(vector_field, points, config: MetricConfig, cost: Optional[CostFn] = None) -> List[MetricSample]:
    """Converse contraction metric at every point of a batch."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    batch, d = points.shape
    cost = cost or _identity_cost
    dt = config.dt
    max_steps = int(np.ceil(config.horizon / dt))
    total = np.zeros((batch, d, d))
    done = np.zeros(batch, dtype=bool)
    horizons = np.full(batch, np.nan)
    tails = np.zeros(batch)
    previous = None
    for step, xs, ys in _variational_steps(vector_field, points, dt):
        integrand = np.einsum("bji,bjk,bkl->bil", ys, cost(xs), ys)
        if previous is not None:
            active = ~done
            total[active] += 0.5 * dt * (previous[active] + integrand[active])
            norms = np.sqrt(np.sum(ys ** 2, axis=(1, 2)))
            finished = active & (norms <= config.tail_tol)
            if np.any(finished):
                t = step * dt
                rate = -np.log(norms[finished] / np.sqrt(d)) / t
                size = np.sqrt(np.sum(integrand[finished] ** 2, axis=(1, 2)))
                horizons[finished] = t
                tails[finished] = np.where(rate > 0, size / (2.0 * np.maximum(rate, 1e-300)), np.inf)
                done |= finished
            if np.all(done):
                break
            if step >= max_steps:
                worst = float(np.max(norms[~done]))
                raise VerificationError(
                    f"no decay of the variational flow by T_max = {config.horizon:g}; the field is possibly "
                    f"non-contracting (||Y(T_max)||_F = {worst:.3e})", residual_norm=worst)
        previous = integrand
    samples = []
    for i in range(batch):
        metric = 0.5 * (total[i] + total[i].T)
        samples.append(MetricSample(points[i].copy(), metric, float(horizons[i]), float(tails[i])))
    return samples


def converse_metric(vector_field, x, config: Optional[MetricConfig] = None,
                    cost: Optional[CostFn] = None) -> MetricSample:
    return converse_metrics(vector_field, np.atleast_2d(x), config or MetricConfig(), cost)[0]


def pullback_metric(diffeo, latent_metric: MetricFn) -> MetricFn:
    """x -> D(phi)(x)^T M(phi(x)) D(phi)(x)."""
    def metric(x):
        jac = diffeo.jacobian(x)
        return jac.T @ latent_metric(diffeo.transform(x)) @ jac
    return metric


def lyapunov_oracle(a, c=None) -> np.ndarray:
    """Solve M A + A^T M = -C through the Kronecker-vectorized system."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    d = a.shape[0]
    if a.shape != (d, d):
        raise ShapeError("lyapunov_oracle", a.shape)
    c = np.eye(d) if c is None else np.atleast_2d(np.asarray(c, dtype=np.float64))
    spectrum = eigvals(a)
    if np.max(spectrum.real) >= 0:
        raise VerificationError(f"matrix is not Hurwitz (max real eigenvalue {np.max(spectrum.real):.3e})")
    eye = np.eye(d)
    system = np.kron(eye, a.T) + np.kron(a.T, eye)
    metric = solve(system, -c.reshape(-1)).reshape(d, d)
    return 0.5 * (metric + metric.T)


def _metrics_at(vector_field, points: np.ndarray, metric_fn: Optional[MetricFn], config: MetricConfig,
                cost: Optional[CostFn]) -> np.ndarray:
    if metric_fn is None:
        return np.stack([s.metric for s in converse_metrics(vector_field, points, config, cost)])
    return np.stack([np.atleast_2d(metric_fn(p)) for p in points])


def _lie_derivative_terms(vector_field, points, metric_fn, config, cost, h):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    _, jac = vector_field.linearize(points)
    metric = _metrics_at(vector_field, points, metric_fn, config, cost)
    flowed = rk4_step(vector_field.evaluate, points, h)
    metric_dot = (_metrics_at(vector_field, flowed, metric_fn, config, cost) - metric) / h
    return points, jac, metric, metric_dot


def metric_residual(vector_field, x, metric_fn: Optional[MetricFn] = None, h: float = 1e-4,
                    config: Optional[MetricConfig] = None, cost: Optional[CostFn] = None) -> np.ndarray:
    """M Df + Df^T M + M' + C with M' taken along the flow over a step h."""
    config = config or MetricConfig()
    single = np.asarray(x).ndim == 1
    points, jac, metric, metric_dot = _lie_derivative_terms(vector_field, x, metric_fn, config, cost, h)
    weights = (cost or _identity_cost)(points)
    residual = metric @ jac + np.swapaxes(jac, 1, 2) @ metric + metric_dot + weights
    return residual[0] if single else residual


def _symmetric_max(mats: np.ndarray) -> np.ndarray:
    return np.array([eigvalsh(0.5 * (m + m.T))[-1] for m in mats])


def contraction_check(vector_field, metric_fn: Optional[MetricFn], c: float, points, h: float = 1e-4,
                      tolerance: float = 1e-8, config: Optional[MetricConfig] = None,
                      cost: Optional[CostFn] = None) -> CheckResult:
    """lambda_max(M Df + Df^T M + M' + 2cM) at every sample; pass iff all <= tolerance."""
    config = config or MetricConfig()
    points, jac, metric, metric_dot = _lie_derivative_terms(vector_field, points, metric_fn, config, cost, h)
    min_eigs = np.array([eigvalsh(0.5 * (m + m.T))[0] for m in metric])
    lhs = metric @ jac + np.swapaxes(jac, 1, 2) @ metric + metric_dot
    values = _symmetric_max(lhs + 2.0 * c * metric)
    positive = bool(np.all(min_eigs > 0))
    worst = float(np.max(values))
    detail = "" if positive else f"metric not positive definite at {int(np.sum(min_eigs <= 0))} samples"
    return CheckResult(f"contraction (c={c:g})", worst, tolerance, positive and worst <= tolerance, detail, values)


def achieved_rate(metric: np.ndarray, lhs: np.ndarray) -> float:
    """Largest c with lhs + 2cM negative semidefinite at every sample."""
    rates = []
    for m, s in zip(metric, lhs):
        sym = 0.5 * (s + s.T)
        rates.append(0.5 * eigh(-sym, 0.5 * (m + m.T), eigvals_only=True)[0])
    return float(np.min(rates))


def equilibrium_bound_check(vector_field, equilibrium, x0s, rate: float,
                            config: Optional[IntegratorConfig] = None) -> CheckResult:
    """max over rollouts and steps of ||x(t) - x*|| / (e^{-rate t} ||x0 - x*||) - 1."""
    config = config or IntegratorConfig(dt=1e-3, horizon=5.0)
    x_star = np.asarray(equilibrium, dtype=np.float64)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=np.float64))
    tolerance = 1e-3
    try:
        states = integrate_array(vector_field.evaluate, x0s, config.dt, config.steps, config.scheme)
    except NumericalError as exc:
        return CheckResult("equilibrium bound", float("inf"), tolerance, False, f"rollout diverged: {exc}")
    times = np.arange(states.shape[0]) * config.dt
    distance = np.linalg.norm(states - x_star, axis=-1)
    start = distance[0]
    moving = start > 0
    if not np.any(moving):
        return CheckResult("equilibrium bound", 0.0, tolerance, True, "all rollouts start at the equilibrium")
    bound = np.exp(-rate * times)[:, None] * start[None, moving]
    ratios = distance[:, moving] / bound - 1.0
    per_rollout = np.max(ratios, axis=0)
    worst = float(np.max(per_rollout))
    return CheckResult("equilibrium bound", worst, tolerance, worst <= tolerance,
                       f"{int(np.sum(moving))} rollouts, dt={config.dt:g}, T={config.horizon:g}")


def sample_box(low, high, count: int, rng: np.random.Generator, inflate: float = 0.5) -> np.ndarray:
    """Uniform samples from [low, high] widened by `inflate` of its extent on each side."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    extent = high - low
    return rng.uniform(low - inflate * extent, high + inflate * extent, size=(count, low.shape[0]))


def verify_field(vector_field, points, c: float, config: MetricConfig,
                 metric_fn: Optional[MetricFn] = None, equilibrium=None, bound_x0s=None,
                 rate: Optional[float] = None, bound_config: Optional[IntegratorConfig] = None,
                 h: float = 1e-4, residual_tol: float = 1e-2, tolerance: float = 1e-6,
                 cost: Optional[CostFn] = None) -> VerifyReport:
    """Run the full check suite on one field and gather a report."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    report = VerifyReport(points=points, settings={
        "metric": config.to_dict(), "c": c, "h": h, "samples": len(points),
        "metric_source": "converse quadrature" if metric_fn is None else "supplied"})
    if rate is not None and equilibrium is not None and bound_x0s is not None:
        report.add(equilibrium_bound_check(vector_field, equilibrium, bound_x0s, rate, bound_config))
    try:
        points, jac, metric, metric_dot = _lie_derivative_terms(vector_field, points, metric_fn, config, cost, h)
    except VerificationError as exc:
        report.add(CheckResult("converse metric", exc.residual_norm or float("inf"), config.tail_tol, False, str(exc)))
        return report
    eigs = np.array([eigvalsh(0.5 * (m + m.T)) for m in metric])
    a0, a1 = float(np.max(eigs[:, -1])), float(np.min(eigs[:, 0]))
    report.metric_bounds = (a0, a1)
    report.add(CheckResult("metric positive definite", a1, 0.0, a1 > 0, f"a0={a0:.4g}, a1={a1:.4g}", eigs[:, 0]))
    lhs = metric @ jac + np.swapaxes(jac, 1, 2) @ metric + metric_dot
    if metric_fn is None:
        weights = (cost or _identity_cost)(points)
        residual_norms = np.sqrt(np.sum((lhs + weights) ** 2, axis=(1, 2)))
        report.add(CheckResult("metric residual", float(np.max(residual_norms)), residual_tol,
                               bool(np.max(residual_norms) <= residual_tol), "Frobenius norm", residual_norms))
    values = _symmetric_max(lhs + 2.0 * c * metric)
    worst = float(np.max(values))
    report.add(CheckResult(f"contraction (c={c:g})", worst, tolerance, worst <= tolerance and a1 > 0, "", values))
    if a1 > 0:
        report.achieved_rate = achieved_rate(metric, lhs)
    return report

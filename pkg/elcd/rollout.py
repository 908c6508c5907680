"""Rollouts of vector fields and trajectory scoring."""

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from .datasets import Dataset, Trajectory
from .errors import ConfigError, ShapeError
from .integrators import Scheme, integrate_array


@dataclass
class IntegratorConfig:
    scheme: str = "rk4"
    dt: float = 0.01
    horizon: float = 10.0

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme).value
        if not self.dt > 0:
            raise ConfigError("dt", f"must be positive, got {self.dt}")
        if not self.horizon >= self.dt:
            raise ConfigError("horizon", f"must be at least dt ({self.dt}), got {self.horizon}")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def to_dict(self) -> Dict:
        return asdict(self)


def _numpy_field(vector_field) -> Callable[[np.ndarray], np.ndarray]:
    return vector_field.evaluate if hasattr(vector_field, "evaluate") else vector_field


def integrate(vector_field, x0, config: IntegratorConfig) -> Trajectory:
    """Fixed-step rollout; velocities are the field evaluated at each state."""
    fn = _numpy_field(vector_field)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    dimension = getattr(vector_field, "dimension", x0.shape[0])
    if x0.shape[0] != dimension:
        raise ShapeError("integrate initial state", x0.shape, (dimension,))
    states = integrate_array(fn, x0, config.dt, config.steps, config.scheme)
    velocities = np.atleast_2d(fn(states))
    times = np.arange(states.shape[0]) * config.dt
    return Trajectory(times, states, velocities)


def integrate_batch(vector_field, x0s, config: IntegratorConfig) -> np.ndarray:
    """States of many rollouts at once, shape (steps + 1, B, d)."""
    fn = _numpy_field(vector_field)
    return integrate_array(fn, np.atleast_2d(np.asarray(x0s, dtype=np.float64)), config.dt, config.steps, config.scheme)


def _points(trajectory: Union[Trajectory, np.ndarray]) -> np.ndarray:
    points = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=np.float64)
    return np.atleast_2d(points)


def dtwd(a: Union[Trajectory, np.ndarray], b: Union[Trajectory, np.ndarray]) -> float:
    """Mean nearest-neighbour distance from a to b plus the same from b to a.

    Point order inside either trajectory is irrelevant.
    """
    pa, pb = _points(a), _points(b)
    if pa.size == 0 or pb.size == 0:
        raise ShapeError("dtwd (empty trajectory)", pa.shape, pb.shape)
    if pa.shape[1] != pb.shape[1]:
        raise ShapeError("dtwd", pa.shape, pb.shape)
    distances = cdist(pa, pb, metric="euclidean")
    return float(distances.min(axis=1).mean() + distances.min(axis=0).mean())


@dataclass
class EvalSummary:
    values: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.values)) if self.values else float("nan")

    @property
    def count(self) -> int:
        return len(self.values)

    def csv_row(self, model: str, dataset: str) -> str:
        return f"{model},{dataset},{self.mean:.6f},{self.std:.6f},{self.count}"


CSV_HEADER = "model,dataset,mean,std,n"


def eval_model(vector_field, dataset: Dataset, scheme: str = "rk4",
               on_trajectory: Optional[Callable[[int, float], None]] = None) -> EvalSummary:
    """Roll out from every demonstration's first state over its own duration and score it."""
    summary = EvalSummary()
    for index, demo in enumerate(dataset.trajectories):
        dt = demo.median_dt
        if dt <= 0:
            raise ConfigError("dataset", f"trajectory {index} has a single sample and cannot be rolled out")
        config = IntegratorConfig(scheme=scheme, dt=dt, horizon=max(demo.duration, dt))
        predicted = integrate(vector_field, demo.states[0], config)
        score = dtwd(predicted, demo)
        summary.values.append(score)
        if on_trajectory is not None:
            on_trajectory(index, score)
    return summary

"""
Demonstration datasets: generators, CSV storage and preprocessing.

A trajectory CSV has the header `traj_id,t,x0,...,x{d-1},v0,...,v{d-1}`,
rows grouped by trajectory with strictly increasing time, and `#` comment
lines. Metadata (generator, config, seed, standardization) lives next to it
in `<stem>.meta.json`.
"""

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve, solve_triangular

from .errors import ConfigError, DatasetFormatError, NumericalError, ShapeError
from .integrators import Scheme, integrate_array


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=np.float64))
        if self.states.shape != self.velocities.shape or self.states.shape[0] != self.times.shape[0]:
            raise DatasetFormatError(
                f"trajectory arrays disagree: times {self.times.shape}, states {self.states.shape}, "
                f"velocities {self.velocities.shape}")
        if self.times.size == 0:
            raise DatasetFormatError("empty trajectory")
        if np.any(np.diff(self.times) <= 0):
            raise DatasetFormatError("trajectory times must be strictly increasing")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.velocities))):
            raise DatasetFormatError("trajectory contains non-finite values")

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def median_dt(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self.times)))


@dataclass
class Standardization:
    """x_std = (x - mean) / std, v_std = v / std."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dimension: int) -> "Standardization":
        return cls(np.zeros(dimension), np.ones(dimension))

    def states(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def velocities(self, v: np.ndarray) -> np.ndarray:
        return v / self.std

    def invert_states(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def invert_velocities(self, v: np.ndarray) -> np.ndarray:
        return v * self.std

    def then(self, other: "Standardization") -> "Standardization":
        """Apply self, then other, as a single map."""
        return Standardization(self.mean + self.std * other.mean, self.std * other.std)

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "Standardization":
        return cls(np.asarray(data["mean"], dtype=np.float64), np.asarray(data["std"], dtype=np.float64))


@dataclass
class Dataset:
    trajectories: List[Trajectory]
    standardization: Optional[Standardization] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise DatasetFormatError("dataset has no trajectories")
        dims = {t.dimension for t in self.trajectories}
        if len(dims) != 1:
            raise DatasetFormatError(f"trajectories disagree on dimension: {sorted(dims)}")
        if self.standardization is None:
            self.standardization = Standardization.identity(self.dimension)

    @property
    def dimension(self) -> int:
        return self.trajectories[0].dimension

    def __len__(self) -> int:
        return len(self.trajectories)

    def pooled(self) -> Tuple[np.ndarray, np.ndarray]:
        """All (state, velocity) pairs stacked across trajectories."""
        return (np.concatenate([t.states for t in self.trajectories]),
                np.concatenate([t.velocities for t in self.trajectories]))

    def final_point_mean(self) -> np.ndarray:
        return np.mean([t.states[-1] for t in self.trajectories], axis=0)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        states, _ = self.pooled()
        return states.min(axis=0), states.max(axis=0)


# generators ----------------------------------------------------------------

def _uniform_sample_times(steps: int, every: int, dt: float) -> np.ndarray:
    return np.arange(0, steps + 1, every) * dt


@dataclass
class PendulumConfig:
    links: int = 2
    masses: Optional[List[float]] = None
    lengths: Optional[List[float]] = None
    damping: float = 0.5
    gravity: float = 9.81
    dt: float = 0.01
    horizon: float = 20.0
    sample_every: int = 5
    trajectories: int = 6

    def __post_init__(self):
        if self.links < 1:
            raise ConfigError("links", f"must be at least 1, got {self.links}")
        self.masses = [1.0] * self.links if self.masses is None else [float(m) for m in self.masses]
        self.lengths = [1.0] * self.links if self.lengths is None else [float(v) for v in self.lengths]
        if len(self.masses) != self.links or len(self.lengths) != self.links:
            raise ConfigError("masses", "one mass and one length per link are required")
        if min(self.masses) <= 0 or min(self.lengths) <= 0:
            raise ConfigError("masses", "masses and lengths must be positive")
        if self.damping < 0:
            raise ConfigError("damping", "must be nonnegative")
        _check_time_grid(self.dt, self.horizon, self.sample_every)
        if self.trajectories < 1:
            raise ConfigError("trajectories", "must be at least 1")


def _check_time_grid(dt: float, horizon: float, every: int) -> None:
    if not dt > 0:
        raise ConfigError("dt", f"must be positive, got {dt}")
    if not horizon >= dt:
        raise ConfigError("horizon", f"must be at least dt, got {horizon}")
    if every < 1:
        raise ConfigError("sample_every", "must be at least 1")


class Pendulum:
    """Damped point-mass n-link pendulum, angles from the downward vertical.

    State layout is (theta_1, omega_1, ..., theta_n, omega_n).
    """

    def __init__(self, config: PendulumConfig):
        self.config = config
        n = config.links
        masses = np.asarray(config.masses)
        self.lengths = np.asarray(config.lengths)
        self.tail_mass = np.cumsum(masses[::-1])[::-1]
        index = np.arange(n)
        self.pair_mass = self.tail_mass[np.maximum.outer(index, index)]
        self.length_outer = np.outer(self.lengths, self.lengths)

    def split(self, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return state[..., 0::2], state[..., 1::2]

    def mass_matrix(self, theta: np.ndarray) -> np.ndarray:
        return self.length_outer * np.cos(np.subtract.outer(theta, theta)) * self.pair_mass

    def __call__(self, state: np.ndarray) -> np.ndarray:
        theta, omega = self.split(state)
        cfg = self.config
        diff = np.subtract.outer(theta, theta)
        coriolis = (self.length_outer * np.sin(diff) * self.pair_mass) @ (omega ** 2)
        gravity = cfg.gravity * self.lengths * np.sin(theta) * self.tail_mass
        rhs = -coriolis - gravity - cfg.damping * omega
        try:
            accel = solve(self.mass_matrix(theta), rhs, assume_a="pos", check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"pendulum mass matrix solve failed: {exc}")
        out = np.empty_like(state)
        out[0::2] = omega
        out[1::2] = accel
        return out

    def energy(self, state: np.ndarray) -> float:
        theta, omega = self.split(state)
        kinetic = 0.5 * omega @ self.mass_matrix(theta) @ omega
        potential = -self.config.gravity * np.sum(self.tail_mass * self.lengths * np.cos(theta))
        return float(kinetic + potential)


def gen_pendulum(config: PendulumConfig, seed: int = 0,
                 initial_states: Optional[Sequence[Sequence[float]]] = None) -> Dataset:
    system = Pendulum(config)
    steps = int(round(config.horizon / config.dt))
    times = _uniform_sample_times(steps, config.sample_every, config.dt)
    if initial_states is None:
        initial_states = []
        for i in range(config.trajectories):
            rng = np.random.default_rng([seed, i])
            state = np.zeros(2 * config.links)
            state[0::2] = rng.uniform(-np.pi / 2, np.pi / 2, size=config.links)
            initial_states.append(state)
    trajectories = []
    for x0 in initial_states:
        states = integrate_array(system, np.asarray(x0, dtype=np.float64), config.dt, steps,
                                 Scheme.RK4, record_every=config.sample_every)
        velocities = np.stack([system(s) for s in states])
        trajectories.append(Trajectory(times[:len(states)], states, velocities))
    metadata = {"generator": "pendulum", "config": asdict(config), "seed": seed}
    return Dataset(trajectories, metadata=metadata)


@dataclass
class RosenbrockConfig:
    dimension: int = 8
    lambdas: Optional[List[float]] = None
    initial_points: int = 4
    low: float = -2.0
    high: float = 2.0
    dt: float = 0.01
    horizon: float = 8.0
    sample_every: int = 5

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if self.lambdas is None:
            self.lambdas = [1.0] + [100.0] * (self.dimension - 1)
        self.lambdas = [float(v) for v in self.lambdas]
        if len(self.lambdas) != self.dimension:
            raise ConfigError("lambdas", f"expected {self.dimension} values, got {len(self.lambdas)}")
        if min(self.lambdas) <= 0:
            raise ConfigError("lambdas", "all values must be positive")
        if self.initial_points < 1:
            raise ConfigError("initial_points", "must be at least 1")
        _check_time_grid(self.dt, self.horizon, self.sample_every)


class Rosenbrock:
    """Riemannian gradient flow of f = |psi|^2, which reduces to x' = -2 Dpsi^{-1} psi."""

    def __init__(self, config: RosenbrockConfig):
        self.roots = np.sqrt(np.asarray(config.lambdas))

    def psi(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        out[0] = self.roots[0] * (1.0 - x[0])
        out[1:] = self.roots[1:] * (x[1:] - x[:-1] ** 2)
        return out

    def psi_jacobian(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        jac = np.diag(self.roots.copy())
        jac[0, 0] = -self.roots[0]
        if n > 1:
            jac[np.arange(1, n), np.arange(n - 1)] = -2.0 * self.roots[1:] * x[:-1]
        return jac

    def objective(self, x: np.ndarray) -> float:
        return float(np.sum(self.psi(x) ** 2))

    def psi_inverse(self, p: np.ndarray) -> np.ndarray:
        """x with psi(x) = p, by forward substitution down the chain."""
        x = np.empty_like(p)
        x[0] = 1.0 - p[0] / self.roots[0]
        for i in range(1, p.shape[0]):
            x[i] = p[i] / self.roots[i] + x[i - 1] ** 2
        return x

    def solution(self, x0: np.ndarray, t: np.ndarray) -> np.ndarray:
        """States at times t: psi evolves as psi' = -2 psi, so psi(t) = e^{-2t} psi(x0)."""
        p0 = self.psi(np.asarray(x0, dtype=np.float64))
        return np.stack([self.psi_inverse(np.exp(-2.0 * s) * p0) for s in np.asarray(t, dtype=np.float64)])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return -2.0 * solve_triangular(self.psi_jacobian(x), self.psi(x), lower=True, check_finite=False)


def gen_rosenbrock(config: RosenbrockConfig, seed: int = 0,
                   initial_states: Optional[Sequence[Sequence[float]]] = None) -> Dataset:
    """Samples the flow on the dt * sample_every grid.

    The field is stiff in x (the chain multiplies by 2 x_{i-1} sqrt(lambda_i)),
    so states come from the closed form in psi coordinates instead of a
    fixed-step march; velocities are the field at those states.
    """
    system = Rosenbrock(config)
    steps = int(round(config.horizon / config.dt))
    times = _uniform_sample_times(steps, config.sample_every, config.dt)
    if initial_states is None:
        initial_states = [np.random.default_rng([seed, i]).uniform(config.low, config.high, size=config.dimension)
                          for i in range(config.initial_points)]
    trajectories = []
    for x0 in initial_states:
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (config.dimension,):
            raise ShapeError("gen_rosenbrock initial state", x0.shape, (config.dimension,))
        states = system.solution(x0, times)
        velocities = np.stack([system(s) for s in states])
        trajectories.append(Trajectory(times.copy(), states, velocities))
    metadata = {"generator": "rosenbrock", "config": asdict(config), "seed": seed}
    return Dataset(trajectories, metadata=metadata)


TOY_MATRIX = np.array([[-1.0, 4.0], [0.0, -1.0]])
TOY_STARTS = ((0.0, 2.0), (0.0, -2.0))


def toy_linear_state(x0, t) -> np.ndarray:
    """Closed form e^{At} x0 = e^{-t} [[1, 4t], [0, 1]] x0 for scalar or array t."""
    t = np.asarray(t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    decay = np.exp(-t)
    return np.stack([decay * (x0[0] + 4.0 * t * x0[1]), decay * x0[1]], axis=-1)


def gen_toy_linear(dt: float = 0.01, horizon: float = 5.0) -> Dataset:
    _check_time_grid(dt, horizon, 1)
    times = np.arange(int(round(horizon / dt)) + 1) * dt
    trajectories = []
    for start in TOY_STARTS:
        states = toy_linear_state(start, times)
        trajectories.append(Trajectory(times, states, states @ TOY_MATRIX.T))
    metadata = {"generator": "toy-linear", "config": {"dt": dt, "horizon": horizon}, "seed": None}
    return Dataset(trajectories, metadata=metadata)


# storage -------------------------------------------------------------------

def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.meta.json")


def _header(dimension: int) -> List[str]:
    return (["traj_id", "t"] + [f"x{i}" for i in range(dimension)] + [f"v{i}" for i in range(dimension)])


def save_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_header(dataset.dimension))
        for index, traj in enumerate(dataset.trajectories):
            for t, x, v in zip(traj.times, traj.states, traj.velocities):
                writer.writerow([index, repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(a)) for a in v])
    sidecar = dict(dataset.metadata)
    sidecar["standardization"] = dataset.standardization.to_dict()
    with open(metadata_path(path), "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)


def _sort_key(traj_id: str):
    try:
        return (0, int(traj_id), traj_id)
    except ValueError:
        return (1, 0, traj_id)


def load_csv(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=str(path))
    header = None
    dimension = 0
    groups: Dict[str, List[Tuple[int, List[float]]]] = {}
    closed = set()
    current = None
    with open(path, newline="", encoding="utf-8") as handle:
        for line_number, row in enumerate(csv.reader(handle), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            row = [cell.strip() for cell in row]
            if header is None:
                width = len(row) - 2
                if width < 2 or width % 2:
                    raise DatasetFormatError(
                        f"bad header {','.join(row)!r}; expected traj_id,t,x0,...,x{{d-1}},v0,...,v{{d-1}}",
                        line=line_number, path=str(path))
                dimension = width // 2
                if row != _header(dimension):
                    raise DatasetFormatError(
                        f"bad header {','.join(row)!r}; expected {','.join(_header(dimension))}",
                        line=line_number, path=str(path))
                header = row
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"expected {len(header)} columns, found {len(row)}",
                                         line=line_number, path=str(path))
            traj_id = row[0]
            if traj_id != current:
                if traj_id in closed:
                    raise DatasetFormatError(f"rows of trajectory {traj_id} are not contiguous",
                                             line=line_number, path=str(path))
                if current is not None:
                    closed.add(current)
                current = traj_id
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise DatasetFormatError("non-numeric value", line=line_number, path=str(path))
            rows = groups.setdefault(traj_id, [])
            if rows and values[0] <= rows[-1][1][0]:
                raise DatasetFormatError(f"time does not increase within trajectory {traj_id}",
                                         line=line_number, path=str(path))
            rows.append((line_number, values))
    if header is None:
        raise DatasetFormatError(f"missing header; expected {','.join(_header(2))} style columns", path=str(path))
    if not groups:
        raise DatasetFormatError("no data rows", path=str(path))
    trajectories = []
    for traj_id in sorted(groups, key=_sort_key):
        block = np.array([values for _, values in groups[traj_id]])
        trajectories.append(Trajectory(block[:, 0], block[:, 1:1 + dimension], block[:, 1 + dimension:]))
    metadata: Dict = {}
    standardization = None
    sidecar = metadata_path(path)
    if sidecar.exists():
        try:
            with open(sidecar, encoding="utf-8") as handle:
                metadata = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"unreadable metadata: {exc}", path=str(sidecar))
        if "standardization" in metadata:
            standardization = Standardization.from_dict(metadata.pop("standardization"))
    return Dataset(trajectories, standardization, metadata)


# preprocessing -------------------------------------------------------------

def _map_dataset(dataset: Dataset, stats: Standardization, inverse: bool) -> List[Trajectory]:
    out = []
    for traj in dataset.trajectories:
        if inverse:
            states, velocities = stats.invert_states(traj.states), stats.invert_velocities(traj.velocities)
        else:
            states, velocities = stats.states(traj.states), stats.velocities(traj.velocities)
        out.append(Trajectory(traj.times.copy(), states, velocities))
    return out


def standardize(dataset: Dataset) -> Tuple[Dataset, Standardization]:
    """Zero pooled mean and unit pooled variance per dimension.

    The returned dataset records the combined map from the raw data, so
    destandardize always recovers the original units.
    """
    states, _ = dataset.pooled()
    mean = states.mean(axis=0)
    std = states.std(axis=0)
    flat = np.flatnonzero(std <= 0.0)
    if flat.size:
        raise DatasetFormatError(f"dimension {int(flat[0])} has zero variance and cannot be standardized")
    stats = Standardization(mean, std)
    combined = dataset.standardization.then(stats)
    return Dataset(_map_dataset(dataset, stats, False), combined, dict(dataset.metadata)), stats


def apply_standardization(dataset: Dataset, stats: Standardization) -> Dataset:
    """Map a raw dataset with previously computed statistics (e.g. from a checkpoint)."""
    if stats.mean.shape != (dataset.dimension,):
        raise ShapeError("apply_standardization", stats.mean.shape, (dataset.dimension,))
    combined = dataset.standardization.then(stats)
    return Dataset(_map_dataset(dataset, stats, False), combined, dict(dataset.metadata))


def destandardize(dataset: Dataset) -> Dataset:
    trajectories = _map_dataset(dataset, dataset.standardization, True)
    return Dataset(trajectories, Standardization.identity(dataset.dimension), dict(dataset.metadata))


def trim_initial(dataset: Dataset, count: int) -> Dataset:
    if count < 0:
        raise ConfigError("trim", "must be nonnegative")
    shortest = min(len(t) for t in dataset.trajectories)
    if count >= shortest:
        raise ConfigError("trim", f"cannot drop {count} samples from a trajectory of length {shortest}")
    trajectories = [Trajectory(t.times[count:], t.states[count:], t.velocities[count:]) for t in dataset.trajectories]
    return replace(dataset, trajectories=trajectories)


def _resample(traj: Trajectory, length: int) -> Tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(traj.times[0], traj.times[-1], length)
    states = np.stack([np.interp(grid, traj.times, traj.states[:, i]) for i in range(traj.dimension)], axis=1)
    velocities = np.stack([np.interp(grid, traj.times, traj.velocities[:, i]) for i in range(traj.dimension)], axis=1)
    return states, velocities


def compose(datasets: Sequence[Dataset]) -> Dataset:
    """Stack datasets along the state dimension, trajectory by trajectory.

    Trajectory i of every input is resampled to the shortest of their lengths
    on a uniform grid over the time span of the first input's trajectory i.
    Velocities are rescaled so they stay derivatives along that common grid.
    """
    if not datasets:
        raise ConfigError("inputs", "nothing to compose")
    counts = {len(d) for d in datasets}
    if len(counts) != 1:
        raise DatasetFormatError(f"inputs have different trajectory counts: {[len(d) for d in datasets]}")
    trajectories = []
    for group in zip(*(d.trajectories for d in datasets)):
        length = min(len(t) for t in group)
        reference = group[0]
        grid = np.linspace(reference.times[0], reference.times[-1], length)
        states, velocities = [], []
        for traj in group:
            s, v = _resample(traj, length)
            ratio = traj.duration / reference.duration if reference.duration > 0 else 1.0
            states.append(s)
            velocities.append(v * ratio)
        trajectories.append(Trajectory(grid, np.concatenate(states, axis=1), np.concatenate(velocities, axis=1)))
    metadata = {"generator": "compose", "config": {"inputs": [d.metadata.get("generator") for d in datasets]},
                "seed": None}
    return Dataset(trajectories, metadata=metadata)

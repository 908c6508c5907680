"""
Phase-plane figures: demonstrations, optional model rollouts and a quiver of
the model field on a 2D slice through the equilibrium.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from .datasets import Dataset
from .errors import ConfigError
from .model import VectorField
from .rollout import IntegratorConfig, integrate


def parse_dims(text: str, dimension: int) -> Tuple[int, int]:
    try:
        dims = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError("dims", f"expected two comma-separated indices, got {text!r}")
    if len(dims) != 2 or dims[0] == dims[1]:
        raise ConfigError("dims", f"expected two distinct indices, got {text!r}")
    if dimension < 2 or min(dims) < 0 or max(dims) >= dimension:
        raise ConfigError("dims", f"indices must lie in 0..{dimension - 1}, got {text!r}")
    return dims


def field_grid(field: VectorField, dims: Tuple[int, int], low: np.ndarray, high: np.ndarray,
               grid: int, anchor: np.ndarray, normalize: bool = True):
    """G x G sample of the field on the (i, j) plane; other coordinates sit at `anchor`."""
    i, j = dims
    xs = np.linspace(low[i], high[i], grid)
    ys = np.linspace(low[j], high[j], grid)
    gx, gy = np.meshgrid(xs, ys)
    points = np.tile(anchor, (grid * grid, 1))
    points[:, i] = gx.reshape(-1)
    points[:, j] = gy.reshape(-1)
    velocities = field.evaluate(points)
    u, v = velocities[:, i], velocities[:, j]
    if normalize:
        length = np.hypot(u, v)
        scale = np.where(length > 0, length, 1.0)
        u, v = u / scale, v / scale
    return points[:, i], points[:, j], u, v


@dataclass
class PlotSummary:
    trajectories: int
    rollouts: int
    arrows: int
    path: str


def plot_phase(dataset: Dataset, dims: Tuple[int, int], path: str, field: Optional[VectorField] = None,
               grid: int = 20, normalize: bool = True, rollout_dt: Optional[float] = None,
               margin: float = 0.1) -> PlotSummary:
    if grid < 1:
        raise ConfigError("grid", f"must be positive, got {grid}")
    i, j = dims
    figure = Figure(figsize=(6, 6))
    ax = figure.add_subplot(1, 1, 1)
    low, high = dataset.bounding_box()
    extent = np.where(high > low, high - low, 1.0)
    low, high = low - margin * extent, high + margin * extent

    for index, traj in enumerate(dataset.trajectories):
        ax.plot(traj.states[:, i], traj.states[:, j], color="black", linewidth=1.5,
                gid=f"demonstration-{index}")

    rollouts, arrows = 0, 0
    if field is not None:
        anchor = field.equilibrium if field.equilibrium is not None else dataset.final_point_mean()
        px, py, u, v = field_grid(field, dims, low, high, grid, np.asarray(anchor, dtype=np.float64), normalize)
        quiver = ax.quiver(px, py, u, v, color="tab:blue", angles="xy", pivot="mid", alpha=0.6)
        quiver.set_gid("field")
        arrows = quiver.N
        for index, traj in enumerate(dataset.trajectories):
            dt = rollout_dt or traj.median_dt
            predicted = integrate(field, traj.states[0], IntegratorConfig(dt=dt, horizon=max(traj.duration, dt)))
            ax.plot(predicted.states[:, i], predicted.states[:, j], color="tab:red", linestyle="--",
                    linewidth=1.2, gid=f"rollout-{index}")
            rollouts += 1
        if field.equilibrium is not None:
            ax.plot([anchor[i]], [anchor[j]], marker="*", color="tab:red", markersize=10, gid="equilibrium")

    ax.set_xlim(low[i], high[i])
    ax.set_ylim(low[j], high[j])
    ax.set_xlabel(f"x{i}")
    ax.set_ylabel(f"x{j}")
    figure.savefig(path, format="svg")
    return PlotSummary(len(dataset), rollouts, arrows, str(path))


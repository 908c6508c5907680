"""
Comparison models sharing the VectorField interface.

SDD    projects an unconstrained field onto the set where a learned convex
       Lyapunov function decays at a fixed rate.
NCDS   integrates a negative-definite Jacobian along the segment from a
       learned anchor point.
EFlow  descends the distance to the target in the coordinates of a learned
       diffeomorphism.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, Parameter, Tensor
from .errors import ConfigError, ShapeError
from .flows import DiffeoStack, FlowConfig
from .model import VectorField
from .networks import MLP, Linear, Module


# SDD -----------------------------------------------------------------------

@dataclass
class SddConfig:
    dimension: int
    hidden: int = 32
    convex_hidden: int = 32
    convex_layers: int = 2
    alpha: float = 0.05
    epsilon: float = 1e-3
    smoothing: float = 0.1

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if not self.alpha > 0:
            raise ConfigError("alpha", "must be positive")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", "must be positive")
        if self.convex_layers < 1:
            raise ConfigError("convex_layers", "must be at least 1")
        if not self.smoothing > 0:
            raise ConfigError("smoothing", "must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


def smooth_relu(u, width: float):
    """0 below zero, u^2 / (2 width) up to width, u - width / 2 above (C^1, convex, nondecreasing)."""
    values = u.value.data if isinstance(u, Dual) else u.data
    quadratic = ad.constant(((values > 0) & (values < width)).astype(np.float64))
    linear = ad.constant((values >= width).astype(np.float64))
    return u.square() * (1.0 / (2.0 * width)) * quadratic + (u - 0.5 * width) * linear


class ConvexPotential(Module):
    """V(x) = smooth_relu(g(x) - g(0)) + eps |x|^2 with g input-convex.

    Hidden-to-hidden and hidden-to-output weights are squared raw values, so
    they stay nonnegative; softplus keeps every composition convex.
    """

    def __init__(self, name: str, config: SddConfig, rng: np.random.Generator):
        d, h = config.dimension, config.convex_hidden
        self.config = config
        self.inputs = [Linear(f"{name}.input{i}", d, h, rng) for i in range(config.convex_layers)]
        self.hidden = [Parameter(f"{name}.hidden{i}", rng.uniform(0.0, 1.0 / np.sqrt(h), size=(h, h)))
                       for i in range(config.convex_layers - 1)]
        self.out_hidden = Parameter(f"{name}.out_hidden", rng.uniform(0.0, 1.0 / np.sqrt(h), size=(h, 1)))
        self.out_input = Linear(f"{name}.out_input", d, 1, rng)
        self._squares = ad.constant(np.ones((d, 1)))

    def convex_part(self, x):
        z = self.inputs[0](x).softplus()
        for layer, raw in zip(self.inputs[1:], self.hidden):
            z = (z.matmul(ad.square(raw)) + layer(x)).softplus()
        return z.matmul(ad.square(self.out_hidden)) + self.out_input(x)

    def __call__(self, x):
        """V at offsets x (relative to the target), shape (B, 1)."""
        batch = (x.value if isinstance(x, Dual) else x).shape[0]
        origin = ad.constant(np.zeros((1, self.config.dimension)))
        g0 = ad.expand(ad.reshape(self.convex_part(origin), (1,)), 0, batch)
        shifted = smooth_relu(self.convex_part(x) - g0, self.config.smoothing)
        return shifted + x.square().matmul(self._squares) * self.config.epsilon

    def value_and_gradient(self, x: Tensor):
        """V (B,) and grad V (B, d) as recorded Tensors."""
        out = self(Dual.seed(x))
        return ad.reshape(out.value, (x.shape[0],)), ad.reshape(out.tangent, x.shape)

    def parameters(self) -> List[Parameter]:
        params = [p for layer in self.inputs for p in layer.parameters()]
        return params + self.hidden + [self.out_hidden] + self.out_input.parameters()


class SddModel(VectorField):

    def __init__(self, config: SddConfig, rng: Optional[np.random.Generator] = None,
                 equilibrium=None, name: str = "sdd"):
        rng = np.random.default_rng(0) if rng is None else rng
        d = config.dimension
        self.config = config
        self.dimension = d
        self.nominal = MLP(f"{name}.nominal", [d, config.hidden, config.hidden, d], rng, activation="tanh")
        self.potential = ConvexPotential(f"{name}.potential", config, rng)
        x_star = np.zeros(d) if equilibrium is None else np.asarray(equilibrium, dtype=np.float64)
        self.x_star = Parameter(f"{name}.equilibrium", x_star, trainable=False)

    @property
    def equilibrium(self) -> np.ndarray:
        return self.x_star.data.copy()

    def parameters(self) -> List[Parameter]:
        return self.nominal.parameters() + self.potential.parameters() + [self.x_star]

    def lyapunov(self, x: Tensor):
        offset = x - ad.expand(self.x_star, 0, x.shape[0])
        return self.potential.value_and_gradient(offset)

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        batch, d = x.shape
        nominal = self.nominal(x)
        value, grad = self.lyapunov(x)
        at_target = (np.linalg.norm(x.data - self.x_star.data, axis=1) == 0.0).astype(np.float64)
        violation = ad.relu(ad.sum_(grad * nominal, -1) + value * self.config.alpha)
        norm2 = ad.sum_(grad.square(), -1) + ad.constant(at_target)
        correction = grad * ad.expand(violation / norm2, -1, d)
        keep = ad.constant(np.broadcast_to((1.0 - at_target)[:, None], (batch, d)).copy())
        return (nominal - correction) * keep


# NCDS ----------------------------------------------------------------------

@dataclass
class NcdsConfig:
    dimension: int
    hidden: int = 16
    epsilon: float = 1e-3
    nodes: int = 32

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", "must be positive")
        if self.nodes < 2:
            raise ConfigError("nodes", "the trapezoid rule needs at least 2 nodes")

    def to_dict(self) -> Dict:
        return asdict(self)


def trapezoid_nodes(count: int):
    nodes = np.linspace(0.0, 1.0, count)
    weights = np.full(count, 1.0 / (count - 1))
    weights[[0, -1]] *= 0.5
    return nodes, weights


class NcdsModel(VectorField):
    """f(z) = f(z0) + int_0^1 Df(z0 + t (z - z0)) (z - z0) dt with Df = -(J^T J + eps I)."""

    def __init__(self, config: NcdsConfig, rng: Optional[np.random.Generator] = None,
                 anchor=None, anchor_velocity=None, name: str = "ncds"):
        rng = np.random.default_rng(0) if rng is None else rng
        m = config.dimension
        self.config = config
        self.dimension = m
        self.net = MLP(f"{name}.jacobian", [m, config.hidden, config.hidden, m * m], rng, activation="tanh")
        self.anchor = Parameter(f"{name}.anchor", np.zeros(m) if anchor is None else anchor)
        self.anchor_velocity = Parameter(f"{name}.anchor_velocity",
                                         np.zeros(m) if anchor_velocity is None else anchor_velocity)
        self.nodes, self.weights = trapezoid_nodes(config.nodes)

    def parameters(self) -> List[Parameter]:
        return self.net.parameters() + [self.anchor, self.anchor_velocity]

    def set_anchor(self, point, velocity) -> None:
        self.anchor.assign(np.asarray(point, dtype=np.float64))
        self.anchor_velocity.assign(np.asarray(velocity, dtype=np.float64))

    def ncds_jacobian(self, z: Tensor) -> Tensor:
        """Df(z) = -(J(z)^T J(z) + eps I), shape (B, m, m)."""
        m = self.dimension
        factor = self.net(z).reshape_trailing((m, m))
        gram = ad.matmul(ad.transpose(factor), factor)
        return -(gram + ad.scale(ad.eye(m, z.shape[0]), self.config.epsilon))

    def __call__(self, z: Tensor) -> Tensor:
        self._check_input(z)
        batch, m = z.shape
        count = self.config.nodes
        anchors = ad.expand(self.anchor, 0, batch)
        offset = z - anchors
        ramp = ad.constant(np.broadcast_to(self.nodes[None, :, None], (batch, count, m)).copy())
        points = ad.expand(offset, 1, count) * ramp + ad.expand(anchors, 1, count)
        jac = self.ncds_jacobian(ad.reshape(points, (batch * count, m)))
        jac = ad.reshape(jac, (batch, count, m, m))
        weights = ad.constant(np.broadcast_to(self.weights[None, :, None, None], (batch, count, m, m)).copy())
        averaged = ad.sum_(jac * weights, axis=1)
        return ad.expand(self.anchor_velocity, 0, batch) + ad.matvec(averaged, offset)


# EFlow ---------------------------------------------------------------------

@dataclass
class EflowConfig:
    dimension: int
    clamp: float = 1e-3

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if not self.clamp > 0:
            raise ConfigError("clamp", "must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


class EflowModel(VectorField):
    """x' = -D(psi)(x)^{-1} g with g the (clamped) unit direction from psi(x*) to psi(x)."""

    def __init__(self, config: EflowConfig, flow: DiffeoStack, equilibrium=None, name: str = "eflow"):
        if flow.dimension != config.dimension:
            raise ShapeError("EflowModel flow", (flow.dimension,), (config.dimension,))
        self.config = config
        self.dimension = config.dimension
        self.flow = flow
        x_star = np.zeros(config.dimension) if equilibrium is None else np.asarray(equilibrium, dtype=np.float64)
        self.x_star = Parameter(f"{name}.equilibrium", x_star, trainable=False)

    @property
    def equilibrium(self) -> np.ndarray:
        return self.x_star.data.copy()

    def parameters(self) -> List[Parameter]:
        return self.flow.parameters() + [self.x_star]

    def potential(self, x: np.ndarray) -> np.ndarray:
        """Phi(psi(x)) = |psi(x) - psi(x*)|."""
        y = self.flow.transform(np.atleast_2d(x))
        target = self.flow.transform(self.x_star.data[None, :])
        return np.linalg.norm(y - target, axis=1)

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        batch, d = x.shape
        joined = ad.concat([x, ad.reshape(self.x_star, (1, d))], axis=0)
        y_all, jac_all = self.flow.forward_with_jacobian(joined)
        y = ad.slice_(y_all, 0, batch, axis=0)
        jac = ad.slice_(jac_all, 0, batch, axis=0)
        target = ad.reshape(ad.slice_(y_all, batch, batch + 1, axis=0), (d,))
        diff = y - ad.expand(target, 0, batch)
        distance = ad.norm(diff, axis=-1)
        near = (distance.data < self.config.clamp).astype(np.float64)
        scale = distance * ad.constant(1.0 - near) + ad.constant(near * self.config.clamp)
        direction = diff / ad.expand(scale, -1, d)
        return -ad.linear_solve(jac, direction)


def default_eflow_flow(dimension: int, rng: np.random.Generator, flow_config: Optional[FlowConfig] = None) -> DiffeoStack:
    return DiffeoStack(flow_config or FlowConfig(dimension=dimension), rng, name="eflow.flow")

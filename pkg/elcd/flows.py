"""
Invertible coordinate changes: rational-quadratic spline couplings,
permuted LU linear layers and the stack that composes them.

Every layer maps a Tensor or a Dual forward, so a single pass with identity
tangents yields the exact Jacobian D(phi)(x) as a recorded (differentiable)
Tensor. Inverses are only needed for diagnostics and run on plain arrays.
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad
from .autodiff import Dual, Parameter, Tensor, no_grad
from .errors import ConfigError, ShapeError
from .networks import Module, ResidualNet

Signal = Union[Tensor, Dual]


def _values(x: Signal) -> np.ndarray:
    return x.value.data if isinstance(x, Dual) else x.data


def _gather(a: np.ndarray, index: np.ndarray) -> np.ndarray:
    return np.take_along_axis(a, index[..., None], axis=-1)[..., 0]


@dataclass(frozen=True)
class RQSpline:
    """Monotone rational-quadratic spline on [-bound, bound], identity outside.

    Raw parameters per transformed coordinate are laid out as K widths,
    K heights and K - 1 interior derivatives. Boundary derivatives are fixed
    to 1 so the linear tails join with a continuous slope. All-zero raw
    parameters give the identity map.
    """

    bins: int = 10
    bound: float = 10.0
    min_bin_width: float = 1e-3
    min_bin_height: float = 1e-3
    min_derivative: float = 1e-3

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigError("bins", f"at least 2 bins are required, got {self.bins}")
        if not self.bound > 0:
            raise ConfigError("bound", f"must be positive, got {self.bound}")
        if self.min_bin_width * self.bins >= 1 or self.min_bin_height * self.bins >= 1:
            raise ConfigError("min_bin_width", "minimum bin size too large for the bin count")
        if not 0 < self.min_derivative < 1:
            raise ConfigError("min_derivative", "must lie in (0, 1)")

    @property
    def raw_size(self) -> int:
        return 3 * self.bins - 1

    @property
    def _derivative_shift(self) -> float:
        return math.log(math.expm1(1.0 - self.min_derivative))

    def _edges(self, raw_sizes: Signal, minimum: float) -> Signal:
        k, b = self.bins, self.bound
        sizes = raw_sizes.softmax() * (1.0 - minimum * k) + minimum
        interior = sizes.cumsum().slice(0, k - 1) * (2.0 * b) - b
        lead = _values(raw_sizes).shape[:-1] + (1,)
        return ad.concat([ad.constant(np.full(lead, -b)), interior, ad.constant(np.full(lead, b))])

    def knots(self, raw: Signal) -> Tuple[Signal, Signal, Signal]:
        """Knot x-positions, y-positions and derivatives, each (..., K + 1)."""
        k = self.bins
        raw_values = _values(raw)
        if raw_values.shape[-1] != self.raw_size:
            raise ShapeError("spline parameters", raw_values.shape, (self.raw_size,))
        xs = self._edges(raw.slice(0, k), self.min_bin_width)
        ys = self._edges(raw.slice(k, 2 * k), self.min_bin_height)
        inner = (raw.slice(2 * k, 3 * k - 1) + self._derivative_shift).softplus() + self.min_derivative
        ones = ad.constant(np.ones(raw_values.shape[:-1] + (1,)))
        return xs, ys, ad.concat([ones, inner, ones])

    def _bin(self, x: np.ndarray, edges: np.ndarray) -> np.ndarray:
        return np.sum(x[..., None] >= edges[..., 1:self.bins], axis=-1)

    def transform(self, x: Signal, raw: Signal) -> Signal:
        """Differentiable forward map; x is (...,) and raw is (..., 3K - 1)."""
        mask = ad.constant((np.abs(_values(x)) <= self.bound).astype(np.float64))
        x_in = x * mask
        xs, ys, ds = self.knots(raw)
        index = self._bin(_values(x_in), _values(xs))
        x_k = xs.take(index)
        width = xs.take(index + 1) - x_k
        y_k = ys.take(index)
        height = ys.take(index + 1) - y_k
        d_k = ds.take(index)
        d_next = ds.take(index + 1)
        xi = (x_in - x_k) / width
        slope = height / width
        mix = xi * (1.0 - xi)
        numerator = height * (slope * xi.square() + d_k * mix)
        denominator = slope + (d_next + d_k - 2.0 * slope) * mix
        inside = y_k + numerator / denominator
        return inside * mask + x * (1.0 - mask)

    def forward(self, x: np.ndarray, raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Values and slopes dy/dx on plain arrays."""
        x = np.asarray(x, dtype=np.float64)
        with no_grad():
            xs, ys, ds = (k.data for k in self.knots(ad.constant(raw)))
            y = self.transform(ad.constant(x), ad.constant(raw)).data
        inside = np.abs(x) <= self.bound
        x_in = np.where(inside, x, 0.0)
        index = self._bin(x_in, xs)
        x_k = _gather(xs, index)
        width = _gather(xs, index + 1) - x_k
        height = _gather(ys, index + 1) - _gather(ys, index)
        d_k = _gather(ds, index)
        d_next = _gather(ds, index + 1)
        xi = (x_in - x_k) / width
        slope = height / width
        mix = xi * (1.0 - xi)
        denominator = slope + (d_next + d_k - 2.0 * slope) * mix
        numerator = slope ** 2 * (d_next * xi ** 2 + 2.0 * slope * mix + d_k * (1.0 - xi) ** 2)
        return y, np.where(inside, numerator / denominator ** 2, 1.0)

    def inverse(self, y: np.ndarray, raw: np.ndarray) -> np.ndarray:
        """Invert by solving the per-bin quadratic for the root inside the bin."""
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(raw)):
            raise ConfigError("spline parameters", "non-finite values")
        with no_grad():
            xs, ys, ds = (k.data for k in self.knots(ad.constant(raw)))
        inside = np.abs(y) <= self.bound
        y_in = np.where(inside, y, 0.0)
        index = self._bin(y_in, ys)
        x_k = _gather(xs, index)
        width = _gather(xs, index + 1) - x_k
        y_k = _gather(ys, index)
        height = _gather(ys, index + 1) - y_k
        d_k = _gather(ds, index)
        d_next = _gather(ds, index + 1)
        slope = height / width
        delta = y_in - y_k
        curvature = d_next + d_k - 2.0 * slope
        a = height * (slope - d_k) + delta * curvature
        b = height * d_k - delta * curvature
        c = -slope * delta
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        root = (2.0 * c) / (-b - np.sqrt(disc))
        return np.where(inside, root * width + x_k, y)


class CouplingLayer(Module):
    """Keeps x[:k] and maps each of x[k:] through a spline conditioned on x[:k]."""

    def __init__(self, name: str, dimension: int, spline: RQSpline, rng: np.random.Generator,
                 hidden: int = 30, blocks: int = 2):
        if dimension < 2:
            raise ConfigError("dimension", "coupling layers need at least two coordinates")
        self.dimension = dimension
        self.split = dimension // 2
        self.spline = spline
        transformed = dimension - self.split
        self.conditioner = ResidualNet(f"{name}.conditioner", self.split, transformed * spline.raw_size,
                                       rng, hidden=hidden, blocks=blocks)

    def _raw(self, kept: Signal) -> Signal:
        return self.conditioner(kept).reshape_trailing((self.dimension - self.split, self.spline.raw_size))

    def forward(self, x: Signal) -> Signal:
        kept = x.slice(0, self.split)
        moved = x.slice(self.split, self.dimension)
        return ad.concat([kept, self.spline.transform(moved, self._raw(kept))])

    def inverse(self, y: np.ndarray) -> np.ndarray:
        kept = y[:, :self.split]
        with no_grad():
            raw = self._raw(ad.constant(kept)).data
        return np.concatenate([kept, self.spline.inverse(y[:, self.split:], raw)], axis=1)

    def parameters(self) -> List[Parameter]:
        return self.conditioner.parameters()


class InvertibleLinear(Module):
    """y = P L U x with unit-lower L, upper U with exp(log-diagonal), fixed permutation P."""

    def __init__(self, name: str, dimension: int, permutation: Optional[np.ndarray] = None):
        d = dimension
        self.dimension = d
        self.set_permutation(np.arange(d) if permutation is None else permutation)
        self.lower = Parameter(f"{name}.lower", np.zeros((d, d)))
        self.upper = Parameter(f"{name}.upper", np.zeros((d, d)))
        self.log_diagonal = Parameter(f"{name}.log_diagonal", np.zeros(d))
        self._lower_mask = ad.constant(np.tril(np.ones((d, d)), -1))
        self._upper_mask = ad.constant(np.triu(np.ones((d, d)), 1))

    def set_permutation(self, permutation) -> None:
        d = self.dimension
        permutation = np.asarray(permutation, dtype=np.intp)
        if sorted(permutation.tolist()) != list(range(d)):
            raise ConfigError("permutation", f"not a permutation of 0..{d - 1}")
        self.permutation = permutation
        self._perm_matrix = ad.constant(np.eye(d)[permutation])

    def factors(self) -> Tuple[Tensor, Tensor]:
        d = self.dimension
        lower = self.lower * self._lower_mask + ad.eye(d)
        diagonal = ad.mul(ad.expand(ad.exp(self.log_diagonal), 0, d), ad.eye(d))
        upper = self.upper * self._upper_mask + diagonal
        return lower, upper

    def matrix(self) -> Tensor:
        lower, upper = self.factors()
        return ad.matmul(self._perm_matrix, ad.matmul(lower, upper))

    def forward(self, x: Signal) -> Signal:
        return x.matmul(ad.transpose(self.matrix()))

    def inverse(self, y: np.ndarray) -> np.ndarray:
        with no_grad():
            lower, upper = (f.data for f in self.factors())
        unpermuted = y[:, np.argsort(self.permutation)]
        a = solve_triangular(lower, unpermuted.T, lower=True, unit_diagonal=True)
        return solve_triangular(upper, a, lower=False).T

    def set_matrix_diagonal(self, diagonal) -> None:
        self.log_diagonal.assign(np.log(np.asarray(diagonal, dtype=np.float64)))

    def parameters(self) -> List[Parameter]:
        return [self.lower, self.upper, self.log_diagonal]


@dataclass
class FlowConfig:
    dimension: int
    couplings: int = 2
    bins: int = 10
    bound: float = 10.0
    hidden: int = 30
    blocks: int = 2
    min_bin_width: float = 1e-3
    min_bin_height: float = 1e-3
    min_derivative: float = 1e-3
    permute: bool = True

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if self.couplings < 0:
            raise ConfigError("couplings", "must be nonnegative")
        if self.couplings and self.dimension < 2:
            raise ConfigError("couplings", "one-dimensional data admits only linear flow layers")
        if self.hidden < 1 or self.blocks < 1:
            raise ConfigError("hidden", "conditioner sizes must be positive")

    def spline(self) -> RQSpline:
        return RQSpline(self.bins, self.bound, self.min_bin_width, self.min_bin_height, self.min_derivative)

    def to_dict(self) -> Dict:
        return asdict(self)


class DiffeoStack(Module):
    """linear, (coupling, linear) x couplings.

    Permutations of all but the last linear layer are drawn from the rng; the
    last one undoes their composition, so the freshly built stack is the
    identity map.
    """

    def __init__(self, config: FlowConfig, rng: Optional[np.random.Generator] = None, name: str = "flow"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        self.dimension = config.dimension
        d = config.dimension
        spline = config.spline()
        permutations = []
        composed = np.arange(d)
        for _ in range(config.couplings):
            perm = rng.permutation(d) if config.permute else np.arange(d)
            permutations.append(perm)
            composed = composed[perm]
        permutations.append(np.argsort(composed))
        self.layers: List[Module] = [InvertibleLinear(f"{name}.linear0", d, permutations[0])]
        for i in range(config.couplings):
            self.layers.append(CouplingLayer(f"{name}.coupling{i}", d, spline, rng, config.hidden, config.blocks))
            self.layers.append(InvertibleLinear(f"{name}.linear{i + 1}", d, permutations[i + 1]))

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def _check(self, x: Signal) -> None:
        shape = _values(x).shape
        if len(shape) != 2 or shape[1] != self.dimension:
            raise ShapeError("diffeo input", shape, (None, self.dimension))

    def forward(self, x: Signal) -> Signal:
        self._check(x)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        for layer in reversed(self.layers):
            z = layer.inverse(z)
        return z

    def forward_with_jacobian(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """phi(x) and D(phi)(x), shape (B, d, d), both recorded."""
        out = self.forward(Dual.seed(x))
        return out.value, out.jacobian()

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with no_grad():
            _, jac = self.forward_with_jacobian(ad.constant(np.atleast_2d(x)))
        return jac.data[0] if x.ndim == 1 else jac.data

    def pullback_velocity(self, x: Tensor, v_latent: Tensor) -> Tensor:
        """D(phi)(x)^{-1} v_latent, differentiable in parameters, x and v."""
        _, jac = self.forward_with_jacobian(x)
        return ad.linear_solve(jac, v_latent)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with no_grad():
            z = self.forward(ad.constant(np.atleast_2d(x))).data
        return z[0] if x.ndim == 1 else z


def pad(x: Signal, dimension: int) -> Signal:
    """Append zeros up to `dimension` coordinates."""
    shape = _values(x).shape
    if shape[-1] > dimension:
        raise ShapeError(f"pad to {dimension}", shape)
    if shape[-1] == dimension:
        return x
    return ad.concat([x, ad.constant(np.zeros(shape[:-1] + (dimension - shape[-1],)))])


def unpad(x: Signal, dimension: int) -> Signal:
    """Keep the first `dimension` coordinates."""
    shape = _values(x).shape
    if dimension > shape[-1] or dimension < 1:
        raise ShapeError(f"unpad to {dimension}", shape)
    if shape[-1] == dimension:
        return x
    return x.slice(0, dimension)

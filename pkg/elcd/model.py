"""
Vector fields and the ELCD model.

The ELCD field is f(x) = A(x, x*)(x - x*) with

    A(x, x*) = -P_s(x, x*)^T P_s(x, x*) + P_a(x, x*) - P_a(x, x*)^T - alpha I

so the symmetric part of A is bounded above by -alpha I at every state and
every trajectory approaches x* at least at rate alpha.
"""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from scipy.linalg import eigvalsh

from . import autodiff as ad
from .autodiff import Parameter, Tensor, no_grad
from .errors import ConfigError, ShapeError
from .networks import MLP, Module


class ModelKind(Enum):
    ELCD = "elcd"
    NCDS = "ncds"
    SDD = "sdd"
    EFLOW = "eflow"

    @classmethod
    def parse(cls, value: str) -> "ModelKind":
        try:
            return cls(value.lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigError("model", f"unknown model kind {value!r} (choose from {choices})")


class VectorField(Module):
    """Batched autonomous field: maps (B, d) states to (B, d) velocities."""

    dimension: int

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    @property
    def equilibrium(self) -> Optional[np.ndarray]:
        return None

    def parameters(self) -> List[Parameter]:
        return []

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.dimension:
            raise ShapeError(f"{type(self).__name__} input", x.shape, (None, self.dimension))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy evaluation; a single state returns a single velocity."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        with no_grad():
            out = self(ad.constant(np.atleast_2d(x))).data
        return out[0] if single else out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Exact Jacobian by one reverse pass per output coordinate."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        jac, _ = ad.jacobian(self, np.atleast_2d(x))
        return jac[0] if single else jac

    def linearize(self, x: np.ndarray):
        """(f(x), Df(x)) for a batch (B, d) from a single recording."""
        jac, value = ad.jacobian(self, np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return value, jac


class LinearField(VectorField):
    """x' = A (x - x*) with a constant matrix."""

    def __init__(self, matrix, equilibrium=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeError("LinearField matrix", self.matrix.shape)
        self.dimension = self.matrix.shape[0]
        self._equilibrium = np.zeros(self.dimension) if equilibrium is None else np.asarray(equilibrium, dtype=np.float64)

    @property
    def equilibrium(self) -> np.ndarray:
        return self._equilibrium

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        offset = x - ad.expand(ad.constant(self._equilibrium), 0, x.shape[0])
        return ad.matvec(ad.constant(self.matrix), offset)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.matrix.copy()
        return np.broadcast_to(self.matrix, (x.shape[0],) + self.matrix.shape).copy()

    def linearize(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - self._equilibrium) @ self.matrix.T, self.jacobian(x)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self._equilibrium) @ self.matrix.T


@dataclass
class ElcdConfig:
    dimension: int
    alpha: float = 0.05
    hidden: int = 16
    learn_equilibrium: bool = False
    ps_init_scale: float = 1e-3

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if not self.alpha > 0:
            raise ConfigError("alpha", f"must be positive, got {self.alpha}")
        if self.hidden < 1:
            raise ConfigError("hidden", f"must be positive, got {self.hidden}")
        if self.ps_init_scale < 0:
            raise ConfigError("ps_init_scale", "must be nonnegative")

    def to_dict(self) -> Dict:
        return asdict(self)


class MatrixNet(Module):
    """(x, x*) -> d x d matrix through a two-hidden-layer tanh MLP."""

    def __init__(self, name: str, dimension: int, hidden: int, rng: np.random.Generator,
                 final_init_scale: float = 0.0):
        self.dimension = dimension
        self.mlp = MLP(name, [2 * dimension, hidden, hidden, dimension * dimension], rng,
                       activation="tanh", final_init_scale=final_init_scale)

    def __call__(self, x: Tensor, x_star: Tensor) -> Tensor:
        d = self.dimension
        out = self.mlp(ad.concat([x, x_star], axis=-1))
        return out.reshape_trailing((d, d))

    def parameters(self) -> List[Parameter]:
        return self.mlp.parameters()

    def zero_output_(self) -> None:
        self.mlp.final.zero_()


class ElcdModel(VectorField):

    def __init__(self, config: ElcdConfig, rng: Optional[np.random.Generator] = None,
                 equilibrium=None, name: str = "elcd"):
        rng = np.random.default_rng(0) if rng is None else rng
        d = config.dimension
        self.config = config
        self.dimension = d
        self.name = name
        self.p_s = MatrixNet(f"{name}.p_s", d, config.hidden, rng, final_init_scale=config.ps_init_scale)
        self.p_a = MatrixNet(f"{name}.p_a", d, config.hidden, rng, final_init_scale=0.0)
        x_star = np.zeros(d) if equilibrium is None else np.asarray(equilibrium, dtype=np.float64)
        if x_star.shape != (d,):
            raise ShapeError("ElcdModel equilibrium", x_star.shape, (d,))
        self.x_star = Parameter(f"{name}.equilibrium", x_star, trainable=config.learn_equilibrium)

    @property
    def equilibrium(self) -> np.ndarray:
        return self.x_star.data.copy()

    def parameters(self) -> List[Parameter]:
        return self.p_s.parameters() + self.p_a.parameters() + [self.x_star]

    def a_matrix(self, x: Tensor, x_star: Optional[Tensor] = None) -> Tensor:
        """A(x, x*) for a batch of states, shape (B, d, d)."""
        self._check_input(x)
        batch = x.shape[0]
        stars = ad.expand(self.x_star if x_star is None else x_star, 0, batch)
        p_s = self.p_s(x, stars)
        p_a = self.p_a(x, stars)
        symmetric = ad.matmul(ad.transpose(p_s), p_s)
        skew = p_a - ad.transpose(p_a)
        damping = ad.scale(ad.eye(self.dimension, batch), self.config.alpha)
        return skew - symmetric - damping

    def field_at(self, x: Tensor, x_star: Tensor) -> Tensor:
        """The field with an externally supplied equilibrium (latent use)."""
        self._check_input(x)
        stars = ad.expand(x_star, 0, x.shape[0])
        return ad.matvec(self.a_matrix(x, x_star), x - stars)

    def __call__(self, x: Tensor) -> Tensor:
        return self.field_at(x, self.x_star)

    def a_matrix_numpy(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        with no_grad():
            out = self.a_matrix(ad.constant(np.atleast_2d(x))).data
        return out[0] if single else out

    def zero_networks_(self) -> None:
        """Zero both output layers so that A = -alpha I everywhere."""
        self.p_s.zero_output_()
        self.p_a.zero_output_()


def symmetric_max_eigenvalue(matrices: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of (M + M^T)/2 for each matrix in a batch."""
    matrices = np.asarray(matrices, dtype=np.float64)
    flat = matrices.reshape((-1,) + matrices.shape[-2:])
    sym = 0.5 * (flat + np.swapaxes(flat, -1, -2))
    values = np.array([eigvalsh(m)[-1] for m in sym])
    return values.reshape(matrices.shape[:-2])

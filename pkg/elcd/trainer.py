"""
Joint training of a coordinate change and latent dynamics by velocity matching.

The data-space prediction is D(phi)(x)^{-1} f(phi(x)). For ELCD the latent
equilibrium z* = phi(x*) is evaluated in the same batch as the states, so the
prediction at x* is exactly zero whatever phi currently is.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import cholesky

from . import autodiff as ad
from .autodiff import Parameter, Tensor, backward
from .baselines import EflowConfig, EflowModel, NcdsConfig, NcdsModel, SddConfig, SddModel
from .datasets import Dataset, Standardization
from .errors import CheckpointError, ConfigError, NumericalError
from .flows import DiffeoStack, FlowConfig, InvertibleLinear, pad, unpad
from .model import ElcdConfig, ElcdModel, ModelKind, VectorField
from .networks import Adam

CHECKPOINT_FORMAT = "elcd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model before its parameters are loaded."""

    kind: str = "elcd"
    dimension: int = 2
    alpha: float = 0.05
    hidden: int = 16
    learn_equilibrium: bool = False
    diffeo: bool = True
    couplings: int = 2
    flow_hidden: int = 30
    flow_blocks: int = 2
    bins: int = 10
    bound: float = 10.0
    permute: bool = True
    latent_dimension: int = 2
    nodes: int = 32
    epsilon: float = 1e-3
    clamp: float = 1e-3
    sdd_hidden: int = 32

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind).value
        if self.dimension < 1:
            raise ConfigError("dimension", f"must be at least 1, got {self.dimension}")
        if self.latent_dimension < 1:
            raise ConfigError("latent_dimension", "must be at least 1")

    @property
    def model_kind(self) -> ModelKind:
        return ModelKind(self.kind)

    def flow_config(self, dimension: Optional[int] = None) -> FlowConfig:
        d = self.dimension if dimension is None else dimension
        couplings = self.couplings if d > 1 else 0
        return FlowConfig(dimension=d, couplings=couplings, bins=self.bins, bound=self.bound,
                          hidden=self.flow_hidden, blocks=self.flow_blocks, permute=self.permute)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be positive, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be positive, got {self.lr}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps", "must be nonnegative")

    def to_dict(self) -> Dict:
        return asdict(self)


class LatentField(VectorField):
    """An ELCD evaluated around a fixed latent equilibrium."""

    def __init__(self, dynamics: ElcdModel, z_star: np.ndarray):
        self.dynamics = dynamics
        self.dimension = dynamics.dimension
        self._z_star = np.asarray(z_star, dtype=np.float64)

    @property
    def equilibrium(self) -> np.ndarray:
        return self._z_star.copy()

    @property
    def rate(self) -> float:
        return self.dynamics.config.alpha

    def __call__(self, z: Tensor) -> Tensor:
        return self.dynamics.field_at(z, ad.constant(self._z_star))


class ComposedModel(VectorField):

    def __init__(self, spec: ModelSpec, dynamics: VectorField, diffeo: Optional[DiffeoStack] = None):
        self.spec = spec
        self.kind = spec.model_kind
        self.dimension = spec.dimension
        self.dynamics = dynamics
        self.diffeo = diffeo

    @property
    def equilibrium(self) -> Optional[np.ndarray]:
        return self.dynamics.equilibrium

    @property
    def latent_dimension(self) -> int:
        return self.dynamics.dimension

    def parameters(self) -> List[Parameter]:
        params = [] if self.diffeo is None else self.diffeo.parameters()
        return params + self.dynamics.parameters()

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        if self.diffeo is None:
            return self.dynamics(x)
        if self.kind is ModelKind.ELCD:
            batch, d = x.shape
            joined = ad.concat([x, ad.reshape(self.dynamics.x_star, (1, d))], axis=0)
            z_all, jac_all = self.diffeo.forward_with_jacobian(joined)
            z = ad.slice_(z_all, 0, batch, axis=0)
            z_star = ad.reshape(ad.slice_(z_all, batch, batch + 1, axis=0), (d,))
            velocity = self.dynamics.field_at(z, z_star)
            return ad.linear_solve(ad.slice_(jac_all, 0, batch, axis=0), velocity)
        z_full, jac = self.diffeo.forward_with_jacobian(x)
        velocity = pad(self.dynamics(unpad(z_full, self.latent_dimension)), self.dimension)
        return ad.linear_solve(jac, velocity)

    def latent_equilibrium(self) -> np.ndarray:
        x_star = self.dynamics.equilibrium
        if self.diffeo is None:
            return x_star
        return self.diffeo.transform(x_star)

    def latent_field(self) -> LatentField:
        if self.kind is not ModelKind.ELCD:
            raise ConfigError("space", f"latent verification is defined for elcd models, not {self.kind.value}")
        return LatentField(self.dynamics, self.latent_equilibrium())


def build_model(spec: ModelSpec, seed: int = 0, equilibrium=None, anchor: Optional[Tuple] = None) -> ComposedModel:
    """Fresh model of the requested kind; the stack starts as the identity map."""
    rng = np.random.default_rng(seed)
    d = spec.dimension
    kind = spec.model_kind
    if kind is ModelKind.ELCD:
        config = ElcdConfig(dimension=d, alpha=spec.alpha, hidden=spec.hidden,
                            learn_equilibrium=spec.learn_equilibrium)
        dynamics = ElcdModel(config, rng, equilibrium)
        diffeo = DiffeoStack(spec.flow_config(), rng) if spec.diffeo else None
    elif kind is ModelKind.NCDS:
        m = min(spec.latent_dimension, d)
        diffeo = DiffeoStack(spec.flow_config(), rng) if spec.diffeo or m < d else None
        point, velocity = (None, None) if anchor is None else anchor
        dynamics = NcdsModel(NcdsConfig(dimension=m, hidden=spec.hidden, epsilon=spec.epsilon, nodes=spec.nodes), rng,
                             None if point is None else np.asarray(point, dtype=np.float64)[:m],
                             None if velocity is None else np.asarray(velocity, dtype=np.float64)[:m])
    elif kind is ModelKind.SDD:
        config = SddConfig(dimension=d, hidden=spec.sdd_hidden, alpha=spec.alpha, epsilon=spec.epsilon)
        dynamics = SddModel(config, rng, equilibrium)
        diffeo = None
    else:
        flow = DiffeoStack(spec.flow_config(), rng, name="eflow.flow")
        dynamics = EflowModel(EflowConfig(dimension=d, clamp=spec.clamp), flow, equilibrium)
        diffeo = None
    return ComposedModel(spec, dynamics, diffeo)


def predict_velocity(model: ComposedModel, x) -> Tensor:
    return model(x if isinstance(x, Tensor) else ad.constant(np.atleast_2d(x)))


def loss(model: VectorField, states, velocities) -> Tensor:
    """(1/B) sum_i |f(x_i) - v_i|^2."""
    states = states if isinstance(states, Tensor) else ad.constant(states)
    velocities = velocities if isinstance(velocities, Tensor) else ad.constant(velocities)
    error = model(states) - velocities
    return ad.scale(ad.sum_(ad.square(error)), 1.0 / states.shape[0])


@dataclass
class TrainResult:
    history: List[float] = field(default_factory=list)
    steps: int = 0


def train(model: ComposedModel, dataset: Dataset, config: TrainConfig,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Adam on shuffled minibatches of pooled (x, v) pairs; deterministic given the seed."""
    result = TrainResult()
    if config.epochs == 0 or config.max_steps == 0:
        return result
    states, velocities = dataset.pooled()
    count = states.shape[0]
    rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    for epoch in range(config.epochs):
        order = rng.permutation(count)
        total, seen = 0.0, 0
        for batch_index, start in enumerate(range(0, count, config.batch_size)):
            rows = order[start:start + config.batch_size]
            value = loss(model, states[rows], velocities[rows])
            current = value.item()
            if not np.isfinite(current):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batch_index}", step=result.steps)
            grads = backward(value)
            optimizer.step(grads)
            result.steps += 1
            total += current * len(rows)
            seen += len(rows)
            if config.max_steps is not None and result.steps >= config.max_steps:
                break
        result.history.append(total / seen)
        if on_epoch is not None:
            on_epoch(epoch, result.history[-1])
        if config.max_steps is not None and result.steps >= config.max_steps:
            break
    return result


# checkpoints ---------------------------------------------------------------

def _encode(values: np.ndarray) -> List[str]:
    return [float(v).hex() for v in np.asarray(values, dtype=np.float64).reshape(-1)]


def _decode(values: List[str], shape, name: str) -> np.ndarray:
    try:
        flat = np.array([float.fromhex(v) for v in values], dtype=np.float64)
    except (TypeError, ValueError):
        raise CheckpointError(f"parameter {name}: corrupt values")
    if flat.size != int(np.prod(shape)):
        raise CheckpointError(f"parameter {name}: {flat.size} values do not fill shape {list(shape)}")
    return flat.reshape(shape)


def _linear_layers(model: ComposedModel) -> List[Tuple[str, InvertibleLinear]]:
    stacks = []
    if model.diffeo is not None:
        stacks.append(model.diffeo)
    if isinstance(model.dynamics, EflowModel):
        stacks.append(model.dynamics.flow)
    return [(layer.lower.name.rsplit(".", 1)[0], layer)
            for stack in stacks for layer in stack.layers if isinstance(layer, InvertibleLinear)]


@dataclass
class CheckpointInfo:
    spec: ModelSpec
    train: TrainConfig
    standardization: Optional[Standardization] = None
    metadata: Dict = field(default_factory=dict)


def checkpoint_document(model: ComposedModel, train_config: TrainConfig,
                        standardization: Optional[Standardization] = None, metadata: Optional[Dict] = None) -> Dict:
    equilibrium = model.equilibrium
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_kind": model.kind.value,
        "model": model.spec.to_dict(),
        "train": train_config.to_dict(),
        "params": [{"name": p.name, "shape": list(p.shape), "data": _encode(p.data)} for p in model.parameters()],
        "permutations": {name: layer.permutation.tolist() for name, layer in _linear_layers(model)},
        "standardization": None if standardization is None else {
            "mean": _encode(standardization.mean), "std": _encode(standardization.std)},
        "equilibrium": None if equilibrium is None else _encode(equilibrium),
        "metadata": metadata or {},
    }


def save_checkpoint(model: ComposedModel, path, train_config: TrainConfig,
                    standardization: Optional[Standardization] = None, metadata: Optional[Dict] = None) -> None:
    document = checkpoint_document(model, train_config, standardization, metadata)
    Path(path).write_text(json.dumps(document, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _known(cls, data: Dict) -> Dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names}


def load_checkpoint(path) -> Tuple[ComposedModel, CheckpointInfo]:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"{path}: file not found")
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})")
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an elcd checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {document.get('version')!r} "
                              f"(expected {CHECKPOINT_VERSION})")
    try:
        spec = ModelSpec(**_known(ModelSpec, document["model"]))
        train_config = TrainConfig(**_known(TrainConfig, document["train"]))
        model = build_model(spec, seed=train_config.seed)
        params = model.named_parameters()
        stored = {entry["name"]: entry for entry in document["params"]}
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: missing field {exc}")
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter names differ (missing {missing}, unexpected {extra})")
    for name, param in params.items():
        entry = stored[name]
        if tuple(entry["shape"]) != param.shape:
            raise CheckpointError(f"parameter {name}: stored shape {entry['shape']} does not match {list(param.shape)}")
        param.assign(_decode(entry["data"], param.shape, name))
    permutations = document.get("permutations", {})
    for name, layer in _linear_layers(model):
        if name in permutations:
            layer.set_permutation(permutations[name])
    stats = document.get("standardization")
    standardization = None
    if stats is not None:
        mean = _decode(stats["mean"], (spec.dimension,), "standardization.mean")
        std = _decode(stats["std"], (spec.dimension,), "standardization.std")
        standardization = Standardization(mean, std)
    return model, CheckpointInfo(spec, train_config, standardization, document.get("metadata", {}))


# the exact linear construction ---------------------------------------------

def toy_linear_construction(alpha: float = 0.05) -> ComposedModel:
    """ELCD plus one linear layer P = diag(1, 4) reproducing x' = [[-1, 4], [0, -1]] x exactly.

    In latent coordinates the field is [[-1, 1], [0, -1]] z, split into the
    skew part [[0, 1/2], [-1/2, 0]] and the symmetric part
    -[[1, -1/2], [-1/2, 1]] = -(P_s^T P_s + alpha I).
    """
    if not 0 < alpha < 0.5:
        raise ConfigError("alpha", "the construction needs 0 < alpha < 1/2")
    spec = ModelSpec(kind="elcd", dimension=2, alpha=alpha, couplings=0, permute=False)
    model = build_model(spec)
    layer = model.diffeo.layers[0]
    layer.set_matrix_diagonal([1.0, 4.0])
    gram = np.array([[1.0, -0.5], [-0.5, 1.0]]) - alpha * np.eye(2)
    factor = cholesky(gram, lower=False)
    skew_half = np.array([[0.0, 0.5], [0.0, 0.0]])
    elcd = model.dynamics
    elcd.zero_networks_()
    elcd.p_s.mlp.final.bias.assign(factor.reshape(-1))
    elcd.p_a.mlp.final.bias.assign(skew_half.reshape(-1))
    return model

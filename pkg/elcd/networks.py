"""Dense building blocks and the Adam optimizer.

Layers accept either a Tensor or a Dual, so the same conditioner evaluates
plain values during training and carries tangents when a Jacobian is needed.
"""

from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .autodiff import Dual, GradientMap, Parameter, Tensor
from .errors import ConfigError

Signal = Union[Tensor, Dual]

ACTIVATIONS = ("tanh", "relu", "softplus")


class Module:
    """Anything that owns Parameters."""

    def parameters(self) -> List[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}


class Linear(Module):
    """y = x W + b with W stored as (in, out).

    `init_scale=None` gives uniform fan-in scaling, 0.0 gives an all-zero
    layer, any other value gives uniform(-scale, scale).
    """

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator,
                 init_scale: Optional[float] = None):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(name, f"layer sizes must be positive, got {in_dim}x{out_dim}")
        bound = 1.0 / np.sqrt(in_dim) if init_scale is None else float(init_scale)
        if bound == 0.0:
            weight = np.zeros((in_dim, out_dim))
            bias = np.zeros(out_dim)
        else:
            weight = rng.uniform(-bound, bound, size=(in_dim, out_dim))
            bias = rng.uniform(-bound, bound, size=out_dim)
        self.weight = Parameter(f"{name}.weight", weight)
        self.bias = Parameter(f"{name}.bias", bias)

    def __call__(self, x: Signal) -> Signal:
        return x.matmul(self.weight).add_bias(self.bias)

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def zero_(self) -> None:
        self.weight.assign(np.zeros(self.weight.shape))
        self.bias.assign(np.zeros(self.bias.shape))


def _activate(x: Signal, activation: str) -> Signal:
    return getattr(x, activation)()


class MLP(Module):
    """Fully connected network: Linear -> activation -> ... -> Linear."""

    def __init__(self, name: str, sizes: Sequence[int], rng: np.random.Generator,
                 activation: str = "tanh", final_init_scale: Optional[float] = None):
        if len(sizes) < 2:
            raise ConfigError(name, "an MLP needs at least input and output sizes")
        if activation not in ACTIVATIONS:
            raise ConfigError(name, f"unknown activation {activation!r}")
        self.activation = activation
        count = len(sizes) - 1
        self.layers = [
            Linear(f"{name}.{i}", sizes[i], sizes[i + 1], rng,
                   init_scale=final_init_scale if i == count - 1 else None)
            for i in range(count)
        ]

    def __call__(self, x: Signal) -> Signal:
        for layer in self.layers[:-1]:
            x = _activate(layer(x), self.activation)
        return self.layers[-1](x)

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def final(self) -> Linear:
        return self.layers[-1]


class ResidualNet(Module):
    """Input layer, `blocks` pre-activation residual blocks, zero output layer."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator,
                 hidden: int = 30, blocks: int = 2):
        if blocks < 1:
            raise ConfigError(name, "at least one residual block is required")
        self.initial = Linear(f"{name}.initial", in_dim, hidden, rng)
        self.blocks = [
            (Linear(f"{name}.block{i}.0", hidden, hidden, rng),
             Linear(f"{name}.block{i}.1", hidden, hidden, rng))
            for i in range(blocks)
        ]
        self.final = Linear(f"{name}.final", hidden, out_dim, rng, init_scale=0.0)

    def __call__(self, x: Signal) -> Signal:
        h = self.initial(x)
        for first, second in self.blocks:
            h = h + second(first(h.tanh()).tanh())
        return self.final(h.tanh())

    def parameters(self) -> List[Parameter]:
        params = self.initial.parameters()
        for first, second in self.blocks:
            params += first.parameters() + second.parameters()
        return params + self.final.parameters()


class Adam:
    """Adam with bias correction; eps is added outside the square root."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("lr", f"must be positive, got {lr}")
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: GradientMap) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if p.name not in grads:
                continue
            g = grads[p.name].data
            self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * g
            self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[p.name] / c1
            v_hat = self.v[p.name] / c2
            p.assign(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))

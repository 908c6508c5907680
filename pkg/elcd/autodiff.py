"""
Reverse-mode differentiation over dense float64 arrays.

Every operation returns a new Tensor that remembers its parents and a closure
mapping the output cotangent to parent cotangents. `backward` walks the
recording in reverse topological order and accumulates into a fresh dict, so
the recording is never mutated and can be differentiated any number of times.

`Dual` carries forward-mode tangents next to a batched value. Its tangent
arithmetic is written with the same recorded Tensor operations, which makes
exact Jacobians (of flows, of Lyapunov candidates) differentiable with respect
to model parameters without any higher-order machinery.
"""

import itertools
import threading
import warnings
from collections.abc import Mapping
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.special import expit

from .errors import ConfigError, NumericalError, ShapeError, SingularMatrixError

Array = np.ndarray
Scalar = Union[int, float]

PIVOT_TOLERANCE = 1e-12

_uids = itertools.count()


class _GradMode(threading.local):
    enabled = True


_mode = _GradMode()


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording (rollouts, plotting, verification)."""
    previous = _mode.enabled
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = previous


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "op", "uid")

    def __init__(self, data, parents: Tuple["Tensor", ...] = (), backward_fn=None,
                 requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.uid = next(_uids)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(()))

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return other + self
        if isinstance(other, (int, float)):
            return add_scalar(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return (-other) + self
        if isinstance(other, (int, float)):
            return add_scalar(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return other * self
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # method forms shared with Dual so layers can be written once -------
    def matmul(self, weight: "Tensor") -> "Tensor":
        return matmul(self, weight)

    def add_bias(self, bias: "Tensor") -> "Tensor":
        return add_bias(self, bias)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def square(self) -> "Tensor":
        return square(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def softmax(self) -> "Tensor":
        return softmax(self, axis=-1)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return sum_(self, axis)

    def slice(self, start: int, stop: int) -> "Tensor":
        return slice_(self, start, stop, axis=-1)

    def reshape_trailing(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, self.shape[:1] + tuple(shape))

    def cumsum(self) -> "Tensor":
        return cumsum(self)

    def take(self, index: Array) -> "Tensor":
        return take_last(self, index)


class Parameter(Tensor):
    """Named leaf that an optimizer may update."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, value, trainable: bool = True):
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"parameter {name} initialized with non-finite values")
        super().__init__(value, requires_grad=trainable, op="param")
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"

    def assign(self, value: Array) -> None:
        """Replace the value; recordings made earlier keep their own arrays."""
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError(f"assign {self.name}", self.data.shape, value.shape)
        self.data = value.copy()


def tensor(values, requires_grad: bool = False) -> Tensor:
    data = np.array(values, dtype=np.float64)
    return Tensor(data, requires_grad=requires_grad)


def constant(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(value)


def _result(data: Array, parents: Tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if _mode.enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, requires_grad=True, op=op)
    return Tensor(data, op=op)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# elementwise binary --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("subtract", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "subtract")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "multiply")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("divide", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b), lambda g: (g / bd, -g * out / bd), "divide")


def scale(a: Tensor, factor: Scalar) -> Tensor:
    factor = float(factor)
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def add_scalar(a: Tensor, value: Scalar) -> Tensor:
    return _result(a.data + float(value), (a,), lambda g: (g,), "add_scalar")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "negate")


# elementwise unary ---------------------------------------------------------

def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _result(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0.0).astype(np.float64)
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.logaddexp(0.0, ad), (a,), lambda g: (g * expit(ad),), "softplus")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# reductions ----------------------------------------------------------------

def sum_(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _result(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    axis = axis % a.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.sum(a.data, axis=axis), (a,), backward, "sum")


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


def norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along one axis; the subgradient at zero is taken as zero."""
    ad = a.data
    out = np.sqrt(np.sum(ad * ad, axis=axis))
    axis = axis % a.ndim

    def backward(g):
        safe = np.where(out > 0.0, out, 1.0)
        ratio = np.where(out > 0.0, g / safe, 0.0)
        return (np.expand_dims(ratio, axis) * ad,)

    return _result(out, (a,), backward, "norm")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return _result(p, (a,), backward, "softmax")


# structure -----------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError("reshape", a.shape, shape)
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape)
    return _result(np.swapaxes(a.data, -1, -2).copy(), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def slice_(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = axis % a.ndim
    size = a.shape[axis]
    if not 0 <= start <= stop <= size:
        raise ShapeError(f"slice[{start}:{stop}] on axis {axis}", a.shape)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result(a.data[index].copy(), (a,), backward, "slice")


def concat(items: Sequence, axis: int = -1):
    """Concatenate along one axis; lifts to Dual when any item carries tangents."""
    if any(isinstance(item, Dual) for item in items):
        return Dual.concat(items)
    items = [_as_tensor(item) for item in items]
    ndim = items[0].ndim
    axis = axis % ndim
    for item in items[1:]:
        if item.ndim != ndim or item.shape[:axis] + item.shape[axis + 1:] != items[0].shape[:axis] + items[0].shape[axis + 1:]:
            raise ShapeError("concat", items[0].shape, item.shape)
    sizes = [item.shape[axis] for item in items]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([item.data for item in items], axis=axis), tuple(items), backward, "concat")


def expand(a: Tensor, axis: int, size: int) -> Tensor:
    """Insert a new axis and repeat the tensor `size` times along it."""
    axis = axis % (a.ndim + 1)
    out = np.repeat(np.expand_dims(a.data, axis), size, axis=axis)
    return _result(out, (a,), lambda g: (np.sum(g, axis=axis),), "expand")


def cumsum(a: Tensor) -> Tensor:
    """Running sum along the last axis."""
    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)

    return _result(np.cumsum(a.data, axis=-1), (a,), backward, "cumsum")


def take_last(a: Tensor, index: Array) -> Tensor:
    """out[...] = a[..., index[...]]; index has the leading shape of a."""
    index = np.asarray(index, dtype=np.intp)
    if index.shape != a.shape[:-1]:
        raise ShapeError("take_last", a.shape, index.shape)
    picked = index[..., None]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.put_along_axis(full, picked, g[..., None], axis=-1)
        return (full,)

    return _result(np.take_along_axis(a.data, picked, axis=-1)[..., 0], (a,), backward, "take")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x + bias where bias matches the trailing axes of x."""
    if bias.ndim > x.ndim or x.shape[x.ndim - bias.ndim:] != bias.shape:
        raise ShapeError("add_bias", x.shape, bias.shape)
    lead = tuple(range(x.ndim - bias.ndim))
    return _result(x.data + bias.data, (x, bias), lambda g: (g, np.sum(g, axis=lead)), "add_bias")


# linear algebra --------------------------------------------------------------
# einsum keeps every output row a function of its own inputs only; the
# equilibrium identity f(x*) = 0 relies on that being true bit for bit.

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    if b.ndim == 2:
        def backward(g):
            return np.einsum("...ik,jk->...ij", g, bd), np.einsum("...ij,...ik->jk", ad, g)
        out = np.einsum("...ij,jk->...ik", ad, bd)
    elif a.ndim == 2:
        def backward(g):
            return np.einsum("...ik,...jk->ij", g, bd), np.einsum("ij,...ik->...jk", ad, g)
        out = np.einsum("ij,...jk->...ik", ad, bd)
    elif a.shape[:-2] == b.shape[:-2]:
        def backward(g):
            return np.einsum("...ik,...jk->...ij", g, bd), np.einsum("...ij,...ik->...jk", ad, g)
        out = np.einsum("...ij,...jk->...ik", ad, bd)
    else:
        raise ShapeError("matmul", a.shape, b.shape)
    return _result(out, (a, b), backward, "matmul")


def matvec(m: Tensor, x: Tensor) -> Tensor:
    if m.ndim < 2 or x.ndim < 1 or m.shape[-1] != x.shape[-1]:
        raise ShapeError("matvec", m.shape, x.shape)
    md, xd = m.data, x.data
    if m.ndim == 2:
        def backward(g):
            return np.einsum("...n,...k->nk", g, xd), np.einsum("nk,...n->...k", md, g)
        out = np.einsum("nk,...k->...n", md, xd)
    elif m.shape[:-2] == x.shape[:-1]:
        def backward(g):
            return np.einsum("...n,...k->...nk", g, xd), np.einsum("...nk,...n->...k", md, g)
        out = np.einsum("...nk,...k->...n", md, xd)
    else:
        raise ShapeError("matvec", m.shape, x.shape)
    return _result(out, (m, x), backward, "matvec")


def linear_solve(a: Tensor, b: Tensor) -> Tensor:
    """Solve a·y = b by LU with partial pivoting; batched over leading axes.

    The reverse pass reuses the factorization: with λ = a⁻ᵀ ḡ, the cotangents
    are ā = −λ yᵀ and b̄ = λ.
    """
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[:-1] != b.shape:
        raise ShapeError("linear_solve", a.shape, b.shape)
    if not (np.all(np.isfinite(a.data)) and np.all(np.isfinite(b.data))):
        raise NumericalError("linear_solve received non-finite values")
    d = a.shape[-1]
    batch_shape = a.shape[:-2]
    mats = a.data.reshape(-1, d, d)
    rhs = b.data.reshape(-1, d)
    factors = []
    solution = np.empty_like(rhs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        for i in range(mats.shape[0]):
            lu, piv = lu_factor(mats[i], check_finite=False)
            pivots = np.abs(np.diag(lu))
            bad = np.flatnonzero(pivots <= PIVOT_TOLERANCE)
            if bad.size:
                raise SingularMatrixError(int(bad[0]), float(pivots[bad[0]]), i if batch_shape else None)
            factors.append((lu, piv))
            solution[i] = lu_solve((lu, piv), rhs[i], check_finite=False)
    y = solution.reshape(b.shape)

    def backward(g):
        flat = g.reshape(-1, d)
        lam = np.empty_like(flat)
        for i, factor in enumerate(factors):
            lam[i] = lu_solve(factor, flat[i], trans=1, check_finite=False)
        lam = lam.reshape(b.shape)
        return -lam[..., :, None] * y[..., None, :], lam

    return _result(y, (a, b), backward, "linear_solve")


def eye(d: int, batch: Optional[int] = None) -> Tensor:
    if batch is None:
        return constant(np.eye(d))
    return constant(np.broadcast_to(np.eye(d), (batch, d, d)).copy())


# reverse pass --------------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in visited:
            continue
        visited.add(node.uid)
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and parent.uid not in visited:
                stack.append((parent, False))
    return order


def _accumulate(root: Tensor) -> Tuple[List[Tensor], Dict[int, Array]]:
    if root.data.size != 1:
        raise ShapeError("backward (loss must be scalar)", root.shape, ())
    order = _topological_order(root)
    grads: Dict[int, Array] = {root.uid: np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.get(node.uid)
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.uid in grads:
                grads[parent.uid] = grads[parent.uid] + pg
            else:
                grads[parent.uid] = pg
    return order, grads


class GradientMap(Mapping):
    """Parameter name -> gradient Tensor of the same shape."""

    def __init__(self, grads: Dict[str, Tensor]):
        self._grads = dict(grads)

    def __getitem__(self, name: str) -> Tensor:
        return self._grads[name]

    def __iter__(self):
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(g.data))) for g in self._grads.values() if g.data.size), default=0.0)


def backward(loss: Tensor) -> GradientMap:
    """Gradients of a scalar loss for every trainable Parameter it touches."""
    order, grads = _accumulate(loss)
    result: Dict[str, Tensor] = {}
    seen: Dict[str, int] = {}
    for node in order:
        if isinstance(node, Parameter) and node.trainable:
            if node.name in seen and seen[node.name] != node.uid:
                raise ConfigError(node.name, "two distinct parameters share this name")
            seen[node.name] = node.uid
            result[node.name] = Tensor(grads.get(node.uid, np.zeros_like(node.data)))
    return GradientMap(result)


def gradients(output: Tensor, wrt: Sequence[Tensor]) -> List[Array]:
    """Gradients of a scalar with respect to arbitrary leaves (zeros if untouched)."""
    _, grads = _accumulate(output)
    return [grads.get(t.uid, np.zeros_like(t.data)) for t in wrt]


def jacobian(fn: Callable[[Tensor], Tensor], x: Array) -> Tuple[Array, Array]:
    """Batched Jacobian of fn: (B, d) -> (B, n) by one reverse pass per output.

    Rows of the batch must not interact inside fn. Returns (J, fn(x)) with J
    of shape (B, n, d).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with _enabled():
        leaf = Tensor(x, requires_grad=True)
        out = fn(leaf)
        rows = []
        for i in range(out.shape[-1]):
            (g,) = gradients(sum_(slice_(out, i, i + 1)), [leaf])
            rows.append(g)
    return np.stack(rows, axis=-2), out.data


@contextmanager
def _enabled() -> Iterator[None]:
    previous = _mode.enabled
    _mode.enabled = True
    try:
        yield
    finally:
        _mode.enabled = previous


def finite_diff_check(function: Callable[[], Tensor], parameters: Sequence[Tensor], step: float = 1e-5) -> float:
    """max |ad − fd| / max(1, |fd|) over every entry, central differences."""
    with _enabled():
        analytic = gradients(function(), parameters)
    worst = 0.0
    with no_grad():
        for param, grad in zip(parameters, analytic):
            base = param.data.copy()
            for i in range(base.size):
                bumped = base.copy()
                bumped.flat[i] = base.flat[i] + step
                param.data = bumped
                up = function().item()
                bumped = base.copy()
                bumped.flat[i] = base.flat[i] - step
                param.data = bumped
                down = function().item()
                fd = (up - down) / (2.0 * step)
                worst = max(worst, abs(grad.flat[i] - fd) / max(1.0, abs(fd)))
            param.data = base
    return worst


# forward-mode tangents -----------------------------------------------------

class Dual:
    """A batched value (B, ...) with tangents (B, m, ...) along m directions.

    `tangent[:, j]` is the derivative of `value` along direction j. A Dual with
    `tangent=None` only evaluates values, so layers written against this
    interface serve both plain forward passes and Jacobian propagation.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value: Tensor, tangent: Optional[Tensor] = None):
        if tangent is not None and (tangent.ndim != value.ndim + 1 or tangent.shape[:1] + tangent.shape[2:] != value.shape):
            raise ShapeError("dual", value.shape, tangent.shape)
        self.value = value
        self.tangent = tangent

    @classmethod
    def seed(cls, x: Tensor) -> "Dual":
        """Identity tangents for a (B, d) input: direction j moves coordinate j."""
        batch, d = x.shape
        return cls(x, eye(d, batch))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def directions(self) -> int:
        return 0 if self.tangent is None else self.tangent.shape[1]

    def _lift(self, factor: Tensor) -> Tensor:
        return expand(factor, 1, self.tangent.shape[1])

    def _chain(self, value: Tensor, derivative: Callable[[], Tensor]) -> "Dual":
        if self.tangent is None:
            return Dual(value)
        return Dual(value, mul(self._lift(derivative()), self.tangent))

    @staticmethod
    def _of(item, like: "Dual") -> "Dual":
        if isinstance(item, Dual):
            return item
        item = _as_tensor(item)
        if like.tangent is None:
            return Dual(item)
        zeros = constant(np.zeros(item.shape[:1] + (like.directions,) + item.shape[1:]))
        return Dual(item, zeros)

    # arithmetic --------------------------------------------------------
    def __add__(self, other) -> "Dual":
        if isinstance(other, (int, float)):
            return Dual(add_scalar(self.value, other), self.tangent)
        if isinstance(other, Dual):
            tangent = _add_optional(self.tangent, other.tangent)
            return Dual(add(self.value, other.value), tangent)
        return Dual(add(self.value, other), self.tangent)

    __radd__ = __add__

    def __neg__(self) -> "Dual":
        return Dual(neg(self.value), None if self.tangent is None else neg(self.tangent))

    def __sub__(self, other) -> "Dual":
        if isinstance(other, (int, float)):
            return self + (-float(other))
        if isinstance(other, Dual):
            return self + (-other)
        return Dual(sub(self.value, other), self.tangent)

    def __rsub__(self, other) -> "Dual":
        return (-self) + other

    def __mul__(self, other) -> "Dual":
        if isinstance(other, (int, float)):
            return Dual(scale(self.value, other), None if self.tangent is None else scale(self.tangent, other))
        if isinstance(other, Dual):
            value = mul(self.value, other.value)
            parts = []
            if self.tangent is not None:
                parts.append(mul(self._lift(other.value), self.tangent))
            if other.tangent is not None:
                parts.append(mul(other._lift(self.value), other.tangent))
            tangent = parts[0] if len(parts) == 1 else (add(parts[0], parts[1]) if parts else None)
            return Dual(value, tangent)
        other = _as_tensor(other)
        value = mul(self.value, other)
        if self.tangent is None:
            return Dual(value)
        return Dual(value, mul(self._lift(other), self.tangent))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Dual":
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        if isinstance(other, Dual):
            inv = reciprocal(other.value)
            value = div(self.value, other.value)
            parts = []
            if self.tangent is not None:
                parts.append(mul(self._lift(inv), self.tangent))
            if other.tangent is not None:
                parts.append(neg(mul(other._lift(mul(value, inv)), other.tangent)))
            tangent = parts[0] if len(parts) == 1 else (add(parts[0], parts[1]) if parts else None)
            return Dual(value, tangent)
        other = _as_tensor(other)
        value = div(self.value, other)
        if self.tangent is None:
            return Dual(value)
        return Dual(value, mul(self._lift(reciprocal(other)), self.tangent))

    # elementwise -------------------------------------------------------
    def tanh(self) -> "Dual":
        out = tanh(self.value)
        return self._chain(out, lambda: add_scalar(neg(square(out)), 1.0))

    def softplus(self) -> "Dual":
        return self._chain(softplus(self.value), lambda: sigmoid(self.value))

    def sigmoid(self) -> "Dual":
        out = sigmoid(self.value)
        return self._chain(out, lambda: mul(out, add_scalar(neg(out), 1.0)))

    def exp(self) -> "Dual":
        out = exp(self.value)
        return self._chain(out, lambda: out)

    def square(self) -> "Dual":
        return self._chain(square(self.value), lambda: scale(self.value, 2.0))

    def sqrt(self) -> "Dual":
        out = sqrt(self.value)
        return self._chain(out, lambda: scale(reciprocal(out), 0.5))

    def relu(self) -> "Dual":
        mask = constant((self.value.data > 0.0).astype(np.float64))
        return self._chain(relu(self.value), lambda: mask)

    # linear structure --------------------------------------------------
    def matmul(self, weight: Tensor) -> "Dual":
        if weight.ndim != 2:
            raise ShapeError("dual matmul (weight must be a matrix)", weight.shape)
        tangent = None if self.tangent is None else matmul(self.tangent, weight)
        return Dual(matmul(self.value, weight), tangent)

    def add_bias(self, bias: Tensor) -> "Dual":
        return Dual(add_bias(self.value, bias), self.tangent)

    def sum(self, axis: int = -1) -> "Dual":
        if axis != -1:
            raise ShapeError("dual sum supports the last axis only", self.shape)
        return Dual(sum_(self.value, -1), None if self.tangent is None else sum_(self.tangent, -1))

    def softmax(self) -> "Dual":
        p = softmax(self.value, axis=-1)
        if self.tangent is None:
            return Dual(p)
        lifted = self._lift(p)
        inner = sum_(mul(lifted, self.tangent), -1)
        centered = sub(self.tangent, expand(inner, -1, self.shape[-1]))
        return Dual(p, mul(lifted, centered))

    def cumsum(self) -> "Dual":
        return Dual(cumsum(self.value), None if self.tangent is None else cumsum(self.tangent))

    def take(self, index: Array) -> "Dual":
        index = np.asarray(index, dtype=np.intp)
        value = take_last(self.value, index)
        if self.tangent is None:
            return Dual(value)
        spread = np.broadcast_to(np.expand_dims(index, 1), self.tangent.shape[:-1])
        return Dual(value, take_last(self.tangent, spread))

    def slice(self, start: int, stop: int) -> "Dual":
        tangent = None if self.tangent is None else slice_(self.tangent, start, stop, axis=-1)
        return Dual(slice_(self.value, start, stop, axis=-1), tangent)

    def reshape_trailing(self, shape: Sequence[int]) -> "Dual":
        shape = tuple(shape)
        value = reshape(self.value, self.shape[:1] + shape)
        if self.tangent is None:
            return Dual(value)
        return Dual(value, reshape(self.tangent, self.tangent.shape[:2] + shape))

    @staticmethod
    def concat(items: Sequence) -> "Dual":
        like = next(item for item in items if isinstance(item, Dual))
        duals = [Dual._of(item, like) for item in items]
        value = concat([d.value for d in duals], axis=-1)
        if like.tangent is None:
            return Dual(value)
        return Dual(value, concat([d.tangent for d in duals], axis=-1))

    def jacobian(self) -> Tensor:
        """(B, n, m): derivative of output component i along direction j."""
        if self.tangent is None:
            raise ShapeError("jacobian of a Dual without tangents", self.shape)
        return transpose(self.tangent)


def _add_optional(a: Optional[Tensor], b: Optional[Tensor]) -> Optional[Tensor]:
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)

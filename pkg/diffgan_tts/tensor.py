"""Dense f64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a float64 numpy array. Every operation applied to a
tensor that requires gradients records its parents and a backward rule;
``backward(loss)`` walks the recorded graph in reverse topological order
and accumulates gradients into the leaves.

Only the operations the acoustic models need are provided: elementwise
arithmetic with numpy broadcasting, batched matmul, 1D convolution
(stride/dilation, zero padding), activations, layer normalization,
softmax, row gathers (embeddings, length regulation), reductions,
reshapes and concatenation.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5

_state = threading.local()

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    # numpy must defer to our reflected operators (ndarray + Tensor)
    __array_ufunc__ = None

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardRule] = None
        self._op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    # -- method aliases --------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Tuple[Tensor, ...], rule: BackwardRule, op: str) -> Tensor:
    out = Tensor(data)
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = rule
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise arithmetic ------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: TensorLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "pow")


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def tabs(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,), "exp")


# -- activations -------------------------------------------------------------


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: TensorLike, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _logistic(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = _logistic(a.data)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def swish(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    s = _logistic(a.data)
    return _node(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), "swish")


def softmax(a: TensorLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), rule, "softmax")


# -- linear algebra ------------------------------------------------------------


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), rule, "matmul")


# -- reductions and shape ops ------------------------------------------------------


def _axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), rule, "sum")


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean", a.shape)
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    perm = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(perm))
    return _node(a.data.transpose(perm), (a,), lambda g: (g.transpose(inverse),), "transpose")


def take(a: TensorLike, index) -> Tensor:
    """Index ``a`` (basic slices or integer arrays); gradients scatter-add back."""
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError:
        raise ShapeError("take", a.shape) from None

    def rule(g):
        z = np.zeros_like(a.data)
        np.add.at(z, index, g)
        return (z,)

    return _node(np.array(out, dtype=np.float64), (a,), rule, "take")


def gather_rows(a: TensorLike, rows: np.ndarray) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    a = as_tensor(a)
    if rows.size and (rows.min() < 0 or rows.max() >= a.shape[0]):
        raise ShapeError("gather_rows", a.shape, rows.shape)
    return take(a, rows)


def pad_rows(a: TensorLike, before: int, after: int) -> Tensor:
    a = as_tensor(a)
    widths = [(before, after)] + [(0, 0)] * (a.ndim - 1)
    n = a.shape[0]
    return _node(np.pad(a.data, widths), (a,), lambda g: (g[before : before + n],), "pad_rows")


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    ref = parts[0]
    ax = axis % ref.ndim
    for t in parts[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError("concat", *(p.shape for p in parts))
    sizes = np.cumsum([p.shape[ax] for p in parts])[:-1]
    out = np.concatenate([p.data for p in parts], axis=ax)
    return _node(out, parts, lambda g: tuple(np.split(g, sizes, axis=ax)), "concat")


# -- composite ops ------------------------------------------------------------------


def layer_norm(
    x: TensorLike,
    gamma: Optional[TensorLike] = None,
    beta: Optional[TensorLike] = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalize over the last axis; zero-variance rows map to zeros."""
    x = as_tensor(x)
    centered = x - mean(x, axis=-1, keepdims=True)
    var = mean(square(centered), axis=-1, keepdims=True)
    out = centered * power(var + eps, -0.5)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def conv1d(
    x: TensorLike,
    weight: TensorLike,
    bias: Optional[TensorLike] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: Optional[int] = None,
) -> Tensor:
    """1D convolution over frames.

    ``x`` is [frames x in_channels], ``weight`` is [kernel x in x out].
    Without explicit padding, stride-1 convolutions are zero-padded to keep
    the frame count ("same"); strided ones pad ``dilation*(k-1)//2`` per side.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    k, c_in, c_out = weight.shape
    span = dilation * (k - 1)
    if padding is not None:
        before = after = int(padding)
    elif stride == 1:
        before, after = span // 2, span - span // 2
    else:
        before = after = span // 2
    padded_len = x.shape[0] + before + after
    n_out = (padded_len - span - 1) // stride + 1
    if n_out < 0 or (n_out == 0 and x.shape[0] > 0):
        raise ShapeError("conv1d", x.shape, weight.shape)
    n_out = max(n_out, 0)
    xp = pad_rows(x, before, after) if (before or after) else x
    index = np.arange(n_out)[:, None] * stride + np.arange(k)[None, :] * dilation
    cols = reshape(take(xp, index), (n_out, k * c_in))
    out = matmul(cols, reshape(weight, (k * c_in, c_out)))
    if bias is not None:
        out = out + bias
    return out


# -- graph traversal ---------------------------------------------------------------


@dataclass(frozen=True)
class OpRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor


def _topological(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


class ComputeGraph:
    """Recorded operations reachable from ``output``, topologically ordered."""

    def __init__(self, output: Tensor) -> None:
        self.output = output
        self._nodes = _topological(output) if output.requires_grad else []

    @property
    def records(self) -> List[OpRecord]:
        return [OpRecord(n._op, n._parents, n) for n in self._nodes if not n.is_leaf]

    def leaves(self) -> List[Tensor]:
        return [n for n in self._nodes if n.is_leaf]

    def backward(self, wrt: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
        if self.output.size != 1:
            raise ShapeError("backward (loss must be scalar)", self.output.shape)
        pending: Dict[int, np.ndarray] = {}
        leaf_grads: Dict[int, np.ndarray] = {}
        if self.output.requires_grad:
            pending[id(self.output)] = np.ones_like(self.output.data)
        for node in reversed(self._nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                leaf_grads[id(node)] = g
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
        targets = self.leaves() if wrt is None else list(wrt)
        return {t: leaf_grads.get(id(t), np.zeros_like(t.data)) for t in targets}


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Backpropagate a scalar loss; returns gradients for ``wrt`` (or every reached leaf).

    Gradients also accumulate into ``leaf.grad``. Leaves with no path from
    the loss get zeros.
    """
    return ComputeGraph(loss).backward(wrt)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def forward_eval(fn: Callable[..., Any], inputs: Mapping[str, Tensor]) -> Dict[str, Tensor]:
    """Evaluate ``fn`` on named inputs and return its outputs by name."""
    result = fn(**inputs)
    if isinstance(result, Tensor):
        return {"output": result}
    if isinstance(result, Mapping):
        return dict(result)
    if isinstance(result, (tuple, list)):
        return {f"output{i}": r for i, r in enumerate(result)}
    raise TypeError(f"forward_eval: unsupported result type {type(result).__name__}")


__all__ = [
    "Tensor",
    "TensorLike",
    "ComputeGraph",
    "OpRecord",
    "as_tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "square",
    "tabs",
    "exp",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "swish",
    "softmax",
    "matmul",
    "tsum",
    "mean",
    "reshape",
    "transpose",
    "take",
    "gather_rows",
    "pad_rows",
    "concat",
    "layer_norm",
    "conv1d",
    "backward",
    "zero_grad",
    "forward_eval",
    "LAYER_NORM_EPS",
]

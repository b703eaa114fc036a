"""Reverse-mode differentiation over numpy arrays.

Every operation returns a `Value` that remembers its inputs and a closure
that pushes the output gradient back into them. `backward` walks the graph
in reverse topological order. Only the operations the T2G architecture
needs are provided.

Example:
    w = Parameter(np.ones((3, 2)), name="w")
    x = Value(np.arange(6.0).reshape(2, 3))
    loss = ad.sum(ad.matmul(x, w))
    ad.backward(loss)
    w.grad  # column sums of x, broadcast over the outputs
"""

from __future__ import annotations

import contextvars
import math
from contextlib import contextmanager
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import ShapeError

ParameterGroup = Literal["backbone", "column_embedding"]

# Additive mask value for excluded softmax entries. exp(MASK_VALUE - max)
# underflows to exactly 0 in both float32 and float64.
MASK_VALUE = -1e9

_dtype: contextvars.ContextVar[type] = contextvars.ContextVar("t2g_dtype", default=np.float32)
_gate_tape: contextvars.ContextVar["GateTape | None"] = contextvars.ContextVar(
    "t2g_gate_tape", default=None
)


def default_dtype() -> type:
    """Floating dtype used for new Values and Parameters."""
    return _dtype.get()


@contextmanager
def precision(name: str):
    """Build and run everything inside the block at the given precision."""
    token = _dtype.set(np.dtype(name).type)
    try:
        yield
    finally:
        _dtype.reset(token)


class Value:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        parents: Sequence["Value"] = (),
        op: str = "leaf",
        requires_grad: bool = False,
        dtype=None,
    ):
        self.data = np.asarray(data).astype(dtype or default_dtype(), copy=False)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = tuple(parents)
        self._backward: Callable[[], None] = _noop

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        return f"Value(op={self.op!r}, shape={self.shape}, dtype={self.data.dtype})"


class Parameter(Value):
    """A trainable leaf.

    `group` selects the learning rate and cannot change after construction.
    Parameters with `trainable=False` are skipped by the optimizer.
    """

    __slots__ = ("name", "_group", "trainable")

    def __init__(self, data, name: str = "", group: ParameterGroup = "backbone", trainable: bool = True):
        super().__init__(np.array(data, copy=True), requires_grad=True, dtype=default_dtype())
        self.name = name
        self._group = group
        self.trainable = trainable

    @property
    def group(self) -> ParameterGroup:
        return self._group

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, group={self._group}, shape={self.shape})"


def _noop() -> None:
    return None


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(node: Value, grad: np.ndarray) -> None:
    if node.requires_grad:
        node.grad += _unbroadcast(grad, node.data.shape).astype(node.grad.dtype, copy=False)


def _broadcast_shape(op: str, a: Value, b: Value) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# === Elementwise arithmetic ===


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("add", a, b)
    out = Value(a.data + b.data, (a, b), "add")

    def _backward():
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)

    out._backward = _backward
    return out


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("sub", a, b)
    out = Value(a.data - b.data, (a, b), "sub")

    def _backward():
        _accumulate(a, out.grad)
        _accumulate(b, -out.grad)

    out._backward = _backward
    return out


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("mul", a, b)
    out = Value(a.data * b.data, (a, b), "mul")

    def _backward():
        _accumulate(a, out.grad * b.data)
        _accumulate(b, out.grad * a.data)

    out._backward = _backward
    return out


def neg(a: Value) -> Value:
    return scale(a, -1.0)


def square(a: Value) -> Value:
    out = Value(a.data * a.data, (a,), "square")

    def _backward():
        _accumulate(a, 2.0 * out.grad * a.data)

    out._backward = _backward
    return out


def scale(a: Value, factor: float) -> Value:
    out = Value(a.data * factor, (a,), "scale")

    def _backward():
        _accumulate(a, out.grad * factor)

    out._backward = _backward
    return out


# === Linear algebra and layout ===


def matmul(a: Value, b: Value) -> Value:
    """Batched matrix product over the last two axes."""
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, "batch dimensions") from None
    out = Value(np.matmul(a.data, b.data), (a, b), "matmul")

    def _backward():
        _accumulate(a, np.matmul(out.grad, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), out.grad))

    out._backward = _backward
    return out


def transpose(a: Value) -> Value:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape, (), "needs at least 2 dimensions")
    out = Value(np.swapaxes(a.data, -1, -2), (a,), "transpose")

    def _backward():
        _accumulate(a, np.swapaxes(out.grad, -1, -2))

    out._backward = _backward
    return out


def permute(a: Value, axes: Sequence[int]) -> Value:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", a.shape, axes)
    inverse = tuple(np.argsort(axes))
    out = Value(np.transpose(a.data, axes), (a,), "permute")

    def _backward():
        _accumulate(a, np.transpose(out.grad, inverse))

    out._backward = _backward
    return out


def reshape(a: Value, shape: Sequence[int]) -> Value:
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    out = Value(data, (a,), "reshape")

    def _backward():
        _accumulate(a, out.grad.reshape(a.shape))

    out._backward = _backward
    return out


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    try:
        data = np.concatenate([v.data for v in values], axis=axis)
    except ValueError:
        raise ShapeError("concat", values[0].shape, values[-1].shape) from None
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    out = Value(data, values, "concat")

    def _backward():
        pieces = np.split(out.grad, bounds[1:-1], axis=axis)
        for v, piece in zip(values, pieces):
            _accumulate(v, piece)

    out._backward = _backward
    return out


def embedding_gather(table: Value, indices: np.ndarray) -> Value:
    """Rows of `table` selected by an integer index array."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError("embedding_gather", table.shape, indices.shape, "index out of range")
    out = Value(table.data[indices], (table,), "embedding_gather")

    def _backward():
        if table.requires_grad:
            np.add.at(table.grad, indices, out.grad)

    out._backward = _backward
    return out


# === Reductions ===


def sum(a: Value, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    out = Value(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum")

    def _backward():
        grad = out.grad
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        _accumulate(a, np.broadcast_to(grad, a.shape))

    out._backward = _backward
    return out


def mean(a: Value, axis=None, keepdims: bool = False) -> Value:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


# === Nonlinearities ===


def sigmoid(a: Value) -> Value:
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    out = Value(s, (a,), "sigmoid")

    def _backward():
        _accumulate(a, out.grad * s * (1.0 - s))

    out._backward = _backward
    return out


def relu(a: Value) -> Value:
    positive = a.data > 0
    tape = _gate_tape.get()
    if tape is not None:
        positive = tape.resolve_mask(positive)
    out = Value(np.where(positive, a.data, 0.0).astype(a.data.dtype), (a,), "relu")

    def _backward():
        _accumulate(a, out.grad * positive)

    out._backward = _backward
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Value) -> Value:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Value(0.5 * x * (1.0 + t), (a,), "gelu")

    def _backward():
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner
        _accumulate(a, out.grad * local)

    out._backward = _backward
    return out


def row_softmax(a: Value, mask: np.ndarray | None = None) -> Value:
    """Softmax over the last axis with an optional additive mask.

    `mask` entries are 0 (allowed) or MASK_VALUE (excluded). A row whose
    entries are all excluded yields an all-zero row and a zero gradient.
    """
    logits = a.data
    dead = None
    if mask is not None:
        mask = np.asarray(mask, dtype=a.data.dtype)
        try:
            np.broadcast_shapes(mask.shape, a.shape)
        except ValueError:
            raise ShapeError("row_softmax", a.shape, mask.shape, "mask") from None
        logits = logits + mask
        dead = ~np.broadcast_to(mask > MASK_VALUE / 2, a.shape).any(axis=-1, keepdims=True)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    if dead is not None and dead.any():
        p = np.where(dead, 0.0, p).astype(a.data.dtype)
    out = Value(p, (a,), "row_softmax")

    def _backward():
        g = out.grad
        _accumulate(a, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    out._backward = _backward
    return out


def log_softmax(a: Value) -> Value:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    result = shifted - log_z
    out = Value(result, (a,), "log_softmax")

    def _backward():
        g = out.grad
        _accumulate(a, g - np.exp(result) * g.sum(axis=-1, keepdims=True))

    out._backward = _backward
    return out


# === Normalization and regularization ===


def layer_norm(a: Value, weight: Value | None = None, bias: Value | None = None, eps: float = 1e-5) -> Value:
    """Normalize over the last axis, then apply the optional affine map."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    parents = [a] + [p for p in (weight, bias) if p is not None]
    result = xhat
    if weight is not None:
        result = result * weight.data
    if bias is not None:
        result = result + bias.data
    out = Value(result, parents, "layer_norm")

    def _backward():
        g = out.grad
        g_xhat = g * weight.data if weight is not None else g
        if a.requires_grad:
            term = g_xhat - g_xhat.mean(axis=-1, keepdims=True)
            term -= xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, inv_std * term)
        if weight is not None:
            _accumulate(weight, g * xhat)
        if bias is not None:
            _accumulate(bias, g)

    out._backward = _backward
    return out


def l2_normalize(a: Value, axis: int = -1, eps: float = 1e-12) -> Value:
    """x / sqrt(|x|² + eps); eps keeps zero vectors finite."""
    norm = np.sqrt((a.data**2).sum(axis=axis, keepdims=True) + eps)
    y = a.data / norm
    out = Value(y, (a,), "l2_normalize")

    def _backward():
        g = out.grad
        _accumulate(a, (g - y * (g * y).sum(axis=axis, keepdims=True)) / norm)

    out._backward = _backward
    return out


def dropout(a: Value, rate: float, training: bool, rng: np.random.Generator | None) -> Value:
    """Inverted dropout: scaled at train time, identity at evaluation."""
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: training mode requires an rng")
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    out = Value(a.data * keep, (a,), "dropout")

    def _backward():
        _accumulate(a, out.grad * keep)

    out._backward = _backward
    return out


# === Straight-through gates ===


class GateTape:
    """Records piecewise decisions, then replays them as smooth surrogates.

    During replay each gate returns `hard₀ + (soft − soft₀)`: the recorded
    binary value plus the drift of its soft input. Its derivative is the
    identity, the same one the straight-through estimator reports, and it
    is smooth, so finite differences can verify it. ReLU masks are replayed
    as recorded, which keeps perturbed inputs off the kink.
    """

    def __init__(self):
        self.entries: list[tuple[np.ndarray, np.ndarray]] = []
        self.masks: list[np.ndarray] = []
        self.replaying = False
        self._cursor = 0
        self._mask_cursor = 0

    def replay(self) -> "GateTape":
        self.replaying = True
        self._cursor = 0
        self._mask_cursor = 0
        return self

    def resolve_mask(self, mask: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.masks.append(mask.copy())
            return mask
        recorded = self.masks[self._mask_cursor]
        self._mask_cursor += 1
        return recorded

    def resolve(self, soft: np.ndarray, hard: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.entries.append((hard.copy(), soft.copy()))
            return hard
        hard0, soft0 = self.entries[self._cursor]
        self._cursor += 1
        return hard0 + (soft - soft0)


@contextmanager
def gate_tape(tape: GateTape):
    token = _gate_tape.set(tape)
    try:
        yield tape
    finally:
        _gate_tape.reset(token)


def straight_through_gate(soft: Value, threshold: float) -> Value:
    """Forward: indicator(soft > threshold). Backward: identity."""
    hard = (soft.data > threshold).astype(soft.data.dtype)
    tape = _gate_tape.get()
    if tape is not None:
        hard = tape.resolve(soft.data, hard)
    out = Value(hard, (soft,), "straight_through_gate")

    def _backward():
        _accumulate(soft, out.grad)

    out._backward = _backward
    return out


# === Backward pass ===


def _topological_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
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


def backward(loss: Value) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's `grad`.

    Intermediate gradients are reset on every call, so calling twice on
    the same graph doubles the leaf gradients exactly.
    Returns the gradients of named Parameters keyed by name.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, (), "loss must be scalar")
    order = _topological_order(loss)
    for node in order:
        if node._parents:
            node.grad = np.zeros_like(node.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(order):
        node._backward()
    return {node.name: node.grad for node in order if isinstance(node, Parameter) and node.name}

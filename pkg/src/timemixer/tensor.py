"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation records a node carrying its parents and a
backward rule. Nodes are stamped with a monotonically increasing sequence
number at record time, so the set of nodes reachable from a loss, sorted by
descending sequence number, is exactly the tape replayed in reverse record
order. Each node is visited once.

Gradients are accumulated only into leaf tensors (tensors created directly
with ``requires_grad=True``, i.e. parameters). Repeated ``backward`` calls
add into ``grad``; call :meth:`Tensor.zero_grad` to reset.

GELU uses the exact form ``x * Phi(x)`` with ``Phi`` the standard normal CDF,
in both forward and backward.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .exceptions import ShapeError

_INV_SQRT_2PI = 0.3989422804014327

_sequence = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that can take part in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.dtype != np.float64:  # pragma: no cover
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = -1

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap an op result; attach it to the tape when any parent needs grad."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
        out._seq = next(_sequence)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def rule(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), rule)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _record(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = as_tensor(x)
    cdf = ndtr(x.data)
    out = x.data * cdf

    def rule(g):
        slope = np.square(x.data)
        slope *= -0.5
        np.exp(slope, out=slope)
        slope *= x.data
        slope *= _INV_SQRT_2PI
        slope += cdf
        slope *= g
        return (slope,)

    return _record(out, (x,), rule)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes.

    A 2-D left operand applied to a batched right operand acts along the
    second-to-last axis of ``b``; this is how temporal linear layers are
    expressed (``W[T_out, T_in] @ x[B, T_in, D]``).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            if a.ndim == 2 and b.ndim == 3:
                # one (T_out, B*D) x (B*D, T_in) product beats B small ones
                n_out, n_in = g.shape[1], b.shape[1]
                ga = (np.transpose(g, (1, 0, 2)).reshape(n_out, -1)
                      @ np.transpose(b.data, (1, 0, 2)).reshape(n_in, -1).T)
            else:
                ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim == 3:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), rule)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` along the last axis (weight is ``[in, out]``)."""
    if bias is None:
        return matmul(x, weight)
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim < 2 or weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    out = np.matmul(x.data, weight.data)
    out += bias.data

    def rule(g):
        flat_g = g.reshape(-1, g.shape[-1])
        gx = np.matmul(g, weight.data.T) if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ flat_g if weight.requires_grad else None
        gb = unbroadcast(flat_g.sum(axis=0), bias.shape) if bias.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, weight, bias), rule)


def temporal_linear(weight, x, bias=None) -> Tensor:
    """``weight[T_out, T_in] @ x[B, T_in, D] + bias[T_out, 1]``.

    Acts along the time axis with one map shared by every feature column.
    """
    if bias is None:
        return matmul(weight, x)
    weight, x, bias = as_tensor(weight), as_tensor(x), as_tensor(bias)
    if weight.ndim != 2 or x.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"temporal_linear shape mismatch: {weight.shape} @ {x.shape}")
    n_out, n_in = weight.shape
    out = np.matmul(weight.data, x.data)
    out += bias.data

    def rule(g):
        gw = gx = gb = None
        if weight.requires_grad:
            gw = (np.transpose(g, (1, 0, 2)).reshape(n_out, -1)
                  @ np.transpose(x.data, (1, 0, 2)).reshape(n_in, -1).T)
        if x.requires_grad:
            gx = np.matmul(weight.data.T, g)
        if bias.requires_grad:
            gb = unbroadcast(g.sum(axis=(0, 2)).reshape(n_out, 1), bias.shape)
        return gw, gx, gb

    return _record(out, (weight, x, bias), rule)


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, axes)


def slice_axis(a, start: int, stop: int, axis: int) -> Tensor:
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def rule(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(a.data[index], (a,), rule)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule)


# -- reductions ----------------------------------------------------------------

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), rule)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


# -- sequence ops -------------------------------------------------------------------

def avg_pool_1d(x, window: int = 2, stride: Optional[int] = None, axis: int = -2) -> Tensor:
    """Average pooling along ``axis``; incomplete trailing windows are dropped."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    axis = axis % x.ndim
    length = x.shape[axis]
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if window > length:
        raise ShapeError(f"pooling window {window} exceeds length {length} on axis {axis}")
    n_out = (length - window) // stride + 1
    moved = np.moveaxis(x.data, axis, -1)
    if window == stride:
        used = moved[..., : n_out * window]
        out = used.reshape(moved.shape[:-1] + (n_out, window)).mean(axis=-1)
    else:
        starts = np.arange(n_out) * stride
        out = np.stack([moved[..., s:s + window].mean(axis=-1) for s in starts], axis=-1)
    out = np.moveaxis(out, -1, axis)

    def rule(g):
        gm = np.moveaxis(g, axis, -1) / window
        full = np.zeros(moved.shape)
        for k in range(window):
            full[..., k: k + (n_out - 1) * stride + 1: stride] += gm
        return (np.moveaxis(full, -1, axis),)

    return _record(out, (x,), rule)


def dropout(x, rate: float, rng: Optional[np.random.Generator] = None, training: bool = True) -> Tensor:
    """Inverted dropout. Identity when ``rate == 0`` or outside training."""
    x = as_tensor(x)
    if rate == 0.0 or not training:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    rng = rng if rng is not None else np.random.default_rng()
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


# -- backward pass -------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor with requires_grad=True")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"non-finite loss {loss.data.reshape(-1)[0]!r}")

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        if t._backward is not None:
            stack.extend(p for p in t._parents if p.requires_grad)
    tape = sorted((t for t in nodes.values() if t._backward is not None),
                  key=lambda t: t._seq, reverse=True)

    pending = {id(loss): seed}
    for node in tape:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

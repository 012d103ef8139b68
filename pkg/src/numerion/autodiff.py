"""A small reverse-mode autodiff engine over dense float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them.  :func:`backward`
orders the graph topologically (the tape) and runs the closures in reverse.

Broadcasting follows numpy, i.e. trailing-axis alignment with leading axes
inserted as needed; gradients are summed back to the operand shapes.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from numerion import _kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op!r})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return op_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return op_add(self, op_scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return op_add(as_tensor(other), op_scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return op_scale(self, float(other))
        return op_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return op_scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return op_scale(self, 1.0 / other)
        return op_mul(self, op_reciprocal(as_tensor(other)))

    def __matmul__(self, other):
        return op_matmul(self, other)

    def __getitem__(self, idx):
        return op_index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return op_reshape(self, shape)

    def transpose(self, *axes):
        return op_transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return op_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return op_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, _op=op)
    if track:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# graph traversal


def build_tape(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not attached to any tensor requiring grad")
    tape = build_tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# elementwise and structural ops


def op_add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def op_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), bw, "mul")


def op_scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def op_reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def op_square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def op_abs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def op_tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def op_gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))

    def bw(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return _make(x * cdf, (a,), bw, "gelu")


def op_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def op_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw, "sum")


def op_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_norm_axis(ax, a.ndim) for ax in axes)
        count = int(np.prod([a.shape[ax] for ax in axes]))
        axis = axes
    return op_scale(op_sum(a, axis, keepdims), 1.0 / count)


def op_reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def op_transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def op_index(a: Tensor, idx) -> Tensor:
    """Basic (view) indexing: slices, integers, ``None`` and ellipsis."""

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw, "index")


def op_concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = _norm_axis(axis, tensors[0].ndim)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def op_stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = _norm_axis(axis, tensors[0].ndim + 1)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw, "stack")


def op_pad_last(a: Tensor, width: int) -> Tensor:
    """Append ``width`` zeros along the last axis."""
    pad = [(0, 0)] * (a.ndim - 1) + [(0, width)]
    n = a.shape[-1]
    return _make(np.pad(a.data, pad), (a,), lambda g: (g[..., :n],), "pad_last")


def op_matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("op_matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                # fold batch axes into one GEMM
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def op_gather(a: Tensor, indices, axis: int = -1) -> Tensor:
    """``out[..., j, ...] = a[..., indices[j], ...]`` along ``axis``.

    The backward pass scatter-adds into the source positions, so repeated
    indices accumulate.
    """
    axis = _norm_axis(axis, a.ndim)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    extent = a.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= extent):
        raise IndexError(f"gather index out of range for extent {extent}")
    out = np.take(a.data, idx, axis=axis)

    def bw(g):
        gm = np.moveaxis(g, axis, -1)
        if idx.size * extent <= 1 << 20:
            onehot = np.zeros((idx.size, extent))
            onehot[np.arange(idx.size), idx] = 1.0
            src = gm @ onehot
        else:
            src = np.zeros(gm.shape[:-1] + (extent,))
            np.add.at(src, (..., idx), gm)
        return (np.moveaxis(src, -1, axis),)

    return _make(out, (a,), bw, "gather")


def op_dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None,
               mask_shape=None) -> Tensor:
    """Inverted dropout; ``mask_shape`` broadcasting against ``a`` sets the granularity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        rng = np.random.default_rng()
    shape = a.shape if mask_shape is None else tuple(mask_shape)
    mask = (rng.random(shape) >= rate) / (1.0 - rate)
    return op_mul(a, Tensor(mask))


def op_hntanh(a: Tensor, p_norm: float = 6.0, eps: float = 1e-12) -> Tensor:
    """Norm-tanh over the trailing axis (one hypercomplex element per slice)."""
    if p_norm < 1:
        raise ValueError(f"p_norm must be >= 1, got {p_norm}")
    n = a.shape[-1]
    x2 = np.ascontiguousarray(a.data.reshape(-1, n))
    y, norms = _kernels.hntanh_forward(x2, float(p_norm), eps)

    def bw(g):
        g2 = np.ascontiguousarray(g.reshape(-1, n))
        return (_kernels.hntanh_backward(x2, norms, g2, float(p_norm), eps).reshape(a.shape),)

    return _make(y.reshape(a.shape), (a,), bw, "hntanh")


# verification


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences of ``f`` at ``x``.

    The denominator is ``max(|analytic|, |numeric|, 1e-8)`` per coordinate.
    ``f`` must map ``x`` (a leaf with ``requires_grad``) to a scalar tensor.
    """
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    if loss.requires_grad:
        backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    x.grad = None
    return float((np.abs(analytic - numeric) / denom).max()) if x.size else 0.0

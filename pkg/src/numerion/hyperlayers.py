"""Hypercomplex layers built on the autodiff engine.

A hypercomplex tensor is an ordinary :class:`~numerion.autodiff.Tensor`
whose trailing axis of length ``n`` holds the coefficients of one element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from numerion.algebra import AlgebraTable, hmul, log2_dim, table_for_dim
from numerion.autodiff import (
    Tensor,
    op_concat,
    op_dropout,
    op_gather,
    op_hntanh,
    op_index,
    op_matmul,
    op_mul,
    op_pad_last,
    op_reshape,
    op_transpose,
)

HNTANH_EPS = 1e-12


@dataclass
class HLinearParams:
    weight: Tensor  # [d_out, d_in, n]
    bias: Tensor  # [d_out, n]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def dim(self) -> int:
        return self.weight.shape[2]


@dataclass
class RhrMlpParams:
    layers: list[HLinearParams]
    head: HLinearParams
    dim: int
    dropout_rate: float = 0.0
    p_norm: float = 6.0

    def __post_init__(self):
        widths = sum(layer.d_out for layer in self.layers)
        if self.head.d_in != widths:
            raise ValueError(f"head expects {self.head.d_in} inputs, hidden stack yields {widths}")

    def tensors(self) -> dict[str, Tensor]:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"layer{i}.weight"] = layer.weight
            named[f"layer{i}.bias"] = layer.bias
        named["head.weight"] = self.head.weight
        named["head.bias"] = self.head.bias
        return named


def hidden_widths(d_h: int, n_layers: int, floor: int = 8) -> list[int]:
    """Halve the width per layer, never below ``floor`` (or ``d_h`` if smaller)."""
    widths, w = [], d_h
    for _ in range(n_layers):
        widths.append(w)
        w = max(min(floor, d_h), w // 2)
    return widths


def init_hlinear(d_in: int, d_out: int, n: int, rng: np.random.Generator) -> HLinearParams:
    """Unit-norm hypercomplex entries scaled by ``1/sqrt(d_in)``; zero bias."""
    w = rng.standard_normal((d_out, d_in, n))
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    w /= np.sqrt(d_in)
    return HLinearParams(Tensor(w, requires_grad=True),
                         Tensor(np.zeros((d_out, n)), requires_grad=True))


def init_rhr_mlp(d_in: int, d_h: int, n_layers: int, d_out: int, n: int,
                 rng: np.random.Generator, dropout_rate: float = 0.0,
                 p_norm: float = 6.0) -> RhrMlpParams:
    layers, width_in = [], d_in
    for w in hidden_widths(d_h, n_layers):
        layers.append(init_hlinear(width_in, w, n, rng))
        width_in = w
    head = init_hlinear(sum(l.d_out for l in layers), d_out, n, rng)
    return RhrMlpParams(layers, head, n, dropout_rate, p_norm)


def _check_dims(n_from: int, n_to: int) -> None:
    log2_dim(n_from)
    log2_dim(n_to)


def hmap(x: Tensor, n_low: int, n_high: int) -> Tensor:
    """Lift ``[..., n_low]`` to ``[..., n_high]`` by zero-padding the new coefficients."""
    _check_dims(n_low, n_high)
    if n_high < n_low:
        raise ValueError(f"hmap cannot lower the dimension ({n_low} -> {n_high})")
    if x.shape[-1] != n_low:
        raise ValueError(f"trailing extent {x.shape[-1]} != {n_low}")
    if n_high == n_low:
        return x
    return op_pad_last(x, n_high - n_low)


def lmap(x: Tensor, n_low: int) -> Tensor:
    """Keep the first ``n_low`` coefficients of ``[..., n_high]``."""
    n_high = x.shape[-1]
    _check_dims(n_low, n_high)
    if n_low > n_high:
        raise ValueError(f"lmap cannot raise the dimension ({n_high} -> {n_low})")
    if n_low == n_high:
        return x
    return op_index(x, (Ellipsis, slice(0, n_low)))


def _left_table(p: HLinearParams, table: AlgebraTable | None) -> AlgebraTable:
    n = p.dim
    if table is None:
        return table_for_dim(n)
    if table.dim != n:
        raise ValueError(f"weights are {n}-dimensional but the table is {table.dim}-dimensional")
    return table.relayout("left")


def block_operator(weight: Tensor, table: AlgebraTable) -> Tensor:
    """Real matrix ``[d_in*n, d_out*n]`` equivalent to ``x -> sum_j w_oj * x_j``.

    Built by gathering weight coefficients through the selection matrix and
    applying the sign matrix, so gradients reach the original coefficients.
    """
    d_out, d_in, n = weight.shape
    a = op_gather(weight, table.select.reshape(-1), axis=-1)
    a = op_mul(op_reshape(a, (d_out, d_in, n, n)), Tensor(table.sign.astype(np.float64)))
    # a[o, j, i, c] multiplies x[j, c] into out[o, i]
    return op_reshape(op_transpose(a, (1, 3, 0, 2)), (d_in * n, d_out * n))


def hlinear(x: Tensor, p: HLinearParams, table: AlgebraTable | None = None) -> Tensor:
    """``out[.., o] = sum_j weight[o, j] * x[.., j] + bias[o]`` under the algebra's product."""
    t = _left_table(p, table)
    n, d_in, d_out = p.dim, p.d_in, p.d_out
    if x.shape[-2:] != (d_in, n):
        raise ValueError(f"expected input [..., {d_in}, {n}], got {x.shape}")
    lead = x.shape[:-2]
    flat = op_reshape(x, (-1, d_in * n))
    out = op_matmul(flat, block_operator(p.weight, t))
    out = op_reshape(out, (*lead, d_out, n))
    return out + p.bias


def hlinear_naive(x, p: HLinearParams, table: AlgebraTable | None = None) -> np.ndarray:
    """Reference loop: one hypercomplex product per (output, input) pair."""
    t = _left_table(p, table)
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    w, b = p.weight.data, p.bias.data
    lead = xd.shape[:-2]
    out = np.empty((*lead, p.d_out, p.dim))
    for o in range(p.d_out):
        acc = np.broadcast_to(b[o], (*lead, p.dim)).copy()
        for j in range(p.d_in):
            acc += hmul(w[o, j], xd[..., j, :], t)
        out[..., o, :] = acc
    return out


def hlinear_from_real(x: Tensor, p: HLinearParams, table: AlgebraTable | None = None) -> Tensor:
    """``hlinear(hmap(x, 1, n))`` for real ``x [.., d_in]`` without the zero coefficients."""
    t = _left_table(p, table)
    n, d_in, d_out = p.dim, p.d_in, p.d_out
    # only column c = 0 of the block operator meets a nonzero input coefficient
    col = op_gather(p.weight, t.select[:, 0], axis=-1)
    col = op_mul(col, Tensor(t.sign[:, 0].astype(np.float64)))
    mat = op_reshape(op_transpose(col, (1, 0, 2)), (d_in, d_out * n))
    lead = x.shape[:-1]
    out = op_matmul(op_reshape(x, (-1, d_in)), mat)
    return op_reshape(out, (*lead, d_out, n)) + p.bias


def hlinear_to_real(x: Tensor, p: HLinearParams, table: AlgebraTable | None = None) -> Tensor:
    """``lmap(hlinear(x), 1)`` squeezed to ``[.., d_out]``, computing only the real row."""
    t = _left_table(p, table)
    n, d_in, d_out = p.dim, p.d_in, p.d_out
    row = op_gather(p.weight, t.select[0], axis=-1)
    row = op_mul(row, Tensor(t.sign[0].astype(np.float64)))
    mat = op_reshape(op_transpose(row, (1, 2, 0)), (d_in * n, d_out))
    lead = x.shape[:-2]
    out = op_matmul(op_reshape(x, (-1, d_in * n)), mat)
    return op_reshape(out, (*lead, d_out)) + op_index(p.bias, (slice(None), 0))


def hntanh(x: Tensor, p_norm: float = 6.0) -> Tensor:
    return op_hntanh(x, p_norm, HNTANH_EPS)


def hntanh_jacobian(c, p_norm: float = 6.0) -> np.ndarray:
    """Closed-form ``n x n`` Jacobian of HNTanh at one element ``c``."""
    c = np.asarray(c, dtype=np.float64)
    n = c.shape[0]
    ac = np.abs(c)
    m = ac.max() if np.isinf(p_norm) else (ac ** p_norm).sum() ** (1.0 / p_norm)
    if m < HNTANH_EPS:
        return np.eye(n)
    t = np.tanh(m)
    k = (m * (1.0 - t * t) - t) / (m * m)
    if np.isinf(p_norm):
        dnorm = (ac == m) * np.sign(c)
    else:
        with np.errstate(divide="ignore"):
            dnorm = np.where(c == 0, 0.0, ac ** (p_norm - 1.0) * np.sign(c)) * m ** (1.0 - p_norm)
    jac = np.outer(c, dnorm) * k
    jac[np.diag_indices(n)] += t / m
    return jac


def rhr_mlp(x: Tensor, params: RhrMlpParams, table: AlgebraTable | None = None,
            training: bool = False, rng: np.random.Generator | None = None,
            fused: bool = True) -> Tensor:
    """Real ``[.., d]`` -> hypercomplex hidden stack -> real ``[.., d_out]``.

    ``fused=True`` skips the structurally zero coefficients of the lifted
    input and the discarded imaginary outputs of the head; ``fused=False``
    runs the literal hmap / hlinear / lmap composition.  Both agree.
    """
    n = params.dim
    if table is None:
        table = table_for_dim(n)
    if table.dim != n:
        raise ValueError(f"RHR-MLP is {n}-dimensional but the table is {table.dim}-dimensional")
    hidden = []
    h = None
    for i, layer in enumerate(params.layers):
        if i == 0 and fused:
            z = hlinear_from_real(x, layer, table)
        else:
            src = hmap(op_reshape(x, (*x.shape, 1)), 1, n) if i == 0 else h
            z = hlinear(src, layer, table)
        h = op_dropout(hntanh(z, params.p_norm), params.dropout_rate, training, rng,
                       mask_shape=z.shape[:-1] + (1,))
        hidden.append(h)
    cat = hidden[0] if len(hidden) == 1 else op_concat(hidden, axis=-2)
    if fused:
        return hlinear_to_real(cat, params.head, table)
    out = lmap(hlinear(cat, params.head, table), 1)
    return op_reshape(out, out.shape[:-1])


__all__ = [
    "HLinearParams",
    "RhrMlpParams",
    "block_operator",
    "hidden_widths",
    "hlinear",
    "hlinear_from_real",
    "hlinear_naive",
    "hlinear_to_real",
    "hmap",
    "hntanh",
    "hntanh_jacobian",
    "init_hlinear",
    "init_rhr_mlp",
    "lmap",
    "rhr_mlp",
]

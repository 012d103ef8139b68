"""Cayley-Dickson algebras of power-of-two dimension.

Multiplication rules are derived by pushing basis units through the
recursive pair product

    (a1, b1) x (a2, b2) = (a1 a2 - b2* b1,  b2 a1 + b1 a2*)
    (a, b)* = (a*, -b)

starting from the reals, and are then stored as a coefficient-selection
matrix plus a sign matrix.  Two equivalent layouts of the same product are
supported:

``"left"``
    ``(a*b)[i] = sum_j sign[i, j] * a[select[i, j]] * b[j]``
    (the operator gathers from the left factor; used by the linear layers,
    where the left factor is the weight)
``"right"``
    ``(a*b)[i] = sum_j sign[i, j] * a[j] * b[select[i, j]]``

Coefficient arrays put the real part at index 0; leading axes broadcast.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from numerion import _kernels

MAX_LOG2_DIM = 6
LAYOUTS = ("left", "right")


class CapacityError(ValueError):
    """Requested algebra is larger than the supported maximum."""


@dataclass(frozen=True)
class AlgebraTable:
    dim: int
    select: np.ndarray
    sign: np.ndarray
    layout: str = "left"

    def relayout(self, layout: str) -> "AlgebraTable":
        """Return the same product expressed in the other layout."""
        if layout == self.layout:
            return self
        return build_table(log2_dim(self.dim), layout)

    def operator(self, a: np.ndarray) -> np.ndarray:
        """Real ``n x n`` matrix ``L`` with ``a*b = L @ b`` (left layout only)."""
        if self.layout != "left":
            return self.relayout("left").operator(a)
        a = np.asarray(a, dtype=np.float64)
        return self.sign * a[..., self.select]


def log2_dim(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"dimension must be a power of two, got {n}")
    return n.bit_length() - 1


def conjugate(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def hmul_recursive(a, b) -> np.ndarray:
    """Product computed literally on coefficient-pair halves, down to the reals."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[-1]
    if b.shape[-1] != n:
        raise ValueError(f"dimension mismatch: {n} vs {b.shape[-1]}")
    log2_dim(n)
    return _cd_product(a, b)


def _cd_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n == 1:
        return a * b
    h = n // 2
    a1, b1 = a[..., :h], a[..., h:]
    a2, b2 = b[..., :h], b[..., h:]
    first = _cd_product(a1, a2) - _cd_product(conjugate(b2), b1)
    second = _cd_product(b2, a1) + _cd_product(b1, conjugate(a2))
    return np.concatenate([first, second], axis=-1)


@lru_cache(maxsize=None)
def build_table(k: int, layout: str = "left") -> AlgebraTable:
    """Multiplication table of the ``2**k``-dimensional algebra."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > MAX_LOG2_DIM:
        raise CapacityError(f"k={k} exceeds the supported maximum {MAX_LOG2_DIM} "
                            f"(tables grow as 4^k)")
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    n = 1 << k
    basis = np.eye(n)
    # products[p, q] = e_p * e_q, each a signed basis unit
    products = _cd_product(basis[:, None, :], basis[None, :, :])
    select = np.full((n, n), -1, dtype=np.int64)
    sign = np.zeros((n, n), dtype=np.int64)
    for p in range(n):
        for q in range(n):
            (nz,) = np.nonzero(products[p, q])
            i = int(nz[0])
            s = int(np.rint(products[p, q, i]))
            if layout == "left":
                select[i, q], sign[i, q] = p, s
            else:
                select[i, p], sign[i, p] = q, s
    select.setflags(write=False)
    sign.setflags(write=False)
    return AlgebraTable(dim=n, select=select, sign=sign, layout=layout)


def table_for_dim(n: int, layout: str = "left") -> AlgebraTable:
    return build_table(log2_dim(n), layout)


def hmul(a, b, table: AlgebraTable | None = None) -> np.ndarray:
    """Table-driven product ``a * b``; broadcasts over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[-1]
    if b.shape[-1] != n:
        raise ValueError(f"dimension mismatch: {n} vs {b.shape[-1]}")
    if table is None:
        table = table_for_dim(n)
    elif table.dim != n:
        raise ValueError(f"table dimension {table.dim} does not match operands ({n})")
    if table.layout != "left":
        table = table.relayout("left")
    a, b = np.broadcast_arrays(a, b)
    lead = a.shape[:-1]
    out = _kernels.hmul_left(
        np.ascontiguousarray(a.reshape(-1, n)),
        np.ascontiguousarray(b.reshape(-1, n)),
        table.select,
        table.sign.astype(np.float64),
    )
    return out.reshape(*lead, n)


def pnorm(a, p: float = 2.0) -> np.ndarray | float:
    if p < 1:
        raise ValueError(f"p-norm requires p >= 1, got {p}")
    a = np.abs(np.asarray(a, dtype=np.float64))
    if np.isinf(p):
        return a.max(axis=-1)
    return (a ** p).sum(axis=-1) ** (1.0 / p)


def find_zero_divisor(n: int = 16, tol: float = 1e-12):
    """Search pairs of two-term basis sums ``(e_a +/- e_b)`` for a zero product.

    Returns ``(x, y)`` or ``None``.
    """
    table = table_for_dim(n)
    candidates = []
    for a, b in itertools.combinations(range(1, n), 2):
        for s in (1.0, -1.0):
            v = np.zeros(n)
            v[a], v[b] = 1.0, s
            candidates.append(v)
    if not candidates:
        return None
    cand = np.array(candidates)
    xs = np.repeat(cand, len(cand), axis=0)
    ys = np.tile(cand, (len(cand), 1))
    prods = hmul(xs, ys, table)
    hits = np.nonzero(np.abs(prods).max(axis=1) < tol)[0]
    if hits.size == 0:
        return None
    h = int(hits[0])
    return xs[h], ys[h]


def find_nonassociative_triple(n: int = 8, tol: float = 1e-12):
    """First basis triple ``(p, q, r)`` with ``(e_p e_q) e_r != e_p (e_q e_r)``."""
    table = table_for_dim(n)
    basis = np.eye(n)
    for p, q, r in itertools.product(range(1, n), repeat=3):
        x, y, z = basis[p], basis[q], basis[r]
        lhs = hmul(hmul(x, y, table), z, table)
        rhs = hmul(x, hmul(y, z, table), table)
        if np.abs(lhs - rhs).max() > tol:
            return p, q, r
    return None


def format_table(table: AlgebraTable) -> str:
    """Select and sign matrices side by side, one algebra row per line."""
    n = table.dim
    w = len(str(n - 1))
    lines = []
    for i in range(n):
        sel = " ".join(f"{v:>{w}d}" for v in table.select[i])
        sgn = " ".join(f"{v:>2d}" for v in table.sign[i])
        lines.append(f"{sel}   |   {sgn}")
    return "\n".join(lines)

"""Pure numpy versions of the compiled kernels (same signatures, same results)."""

import numpy as np


def _abs_pow(a, p):
    if p == 2.0:
        return a * a
    if p == 6.0:
        a2 = a * a
        return a2 * a2 * a2
    return a ** p


def hntanh_forward(x, p, eps):
    """Row-wise ``x / |x|_p * tanh(|x|_p)``; rows with norm below eps pass through."""
    ax = np.abs(x)
    if np.isinf(p):
        norms = ax.max(axis=1)
    else:
        norms = _abs_pow(ax, p).sum(axis=1) ** (1.0 / p)
    small = norms < eps
    safe = np.where(small, 1.0, norms)
    scale = np.where(small, 1.0, np.tanh(safe) / safe)
    return x * scale[:, None], norms


def hntanh_backward(x, norms, grad, p, eps):
    """Vector-Jacobian product of :func:`hntanh_forward`."""
    small = norms < eps
    m = np.where(small, 1.0, norms)
    t = np.tanh(m)
    ratio = t / m
    k = (m * (1.0 - t * t) - t) / (m * m)
    ax = np.abs(x)
    if np.isinf(p):
        dn = (ax == m[:, None]) * np.sign(x)
    elif p == 1.0:
        dn = np.sign(x)
    else:
        dn = _abs_pow(ax, p - 1.0) * np.sign(x) * (m ** (1.0 - p))[:, None]
    xg = (x * grad).sum(axis=1)
    dx = grad * ratio[:, None] + dn * (k * xg)[:, None]
    return np.where(small[:, None], grad, dx)


def hmul_left(a, b, select, sign):
    """``out[r, i] = sum_j sign[i, j] * a[r, select[i, j]] * b[r, j]``."""
    return np.einsum("rij,ij,rj->ri", a[:, select], sign, b)


def dft(x):
    """Direct O(N^2) DFT of a real sequence; returns (real, imag)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    k = np.arange(n)
    phase = 2.0 * np.pi * ((np.outer(k, k)) % n) / n
    return np.cos(phase) @ x, -(np.sin(phase) @ x)

"""Gradient verification suite: every differentiable piece against central differences."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from numerion.algebra import table_for_dim
from numerion.autodiff import (
    Tensor,
    backward,
    grad_check,
    op_concat,
    op_gather,
    op_gelu,
    op_matmul,
    op_mean,
    op_mul,
    op_softmax,
    op_sum,
    op_tanh,
)
from numerion.hyperlayers import hntanh, hntanh_jacobian, init_rhr_mlp, rhr_mlp
from numerion.model import NumerionConfig, init_params, mae_loss, numerion_forward


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44} max rel err {self.max_error:.3e}  (tol {self.tolerance:g})"


def _timed(name, tol, fn) -> CheckResult:
    t0 = time.perf_counter()
    err = fn()
    return CheckResult(name, float(err), tol, time.perf_counter() - t0)


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float((np.abs(a - b) / denom).max())


def sample_pnorm_ball(rng: np.random.Generator, n: int, p: float, lo=0.1, hi=5.0) -> np.ndarray:
    """Random direction rescaled to a p-norm drawn uniformly from ``[lo, hi]``."""
    c = rng.standard_normal(n)
    m = np.abs(c).max() if np.isinf(p) else (np.abs(c) ** p).sum() ** (1 / p)
    return c / m * rng.uniform(lo, hi)


def _hntanh_extended(c: np.ndarray, p: float) -> np.ndarray:
    """HNTanh of one element in extended precision (finite-difference oracle only)."""
    c = c.astype(np.longdouble)
    a = np.abs(c)
    m = a.max() if np.isinf(p) else (a ** p).sum() ** (1 / np.longdouble(p))
    return c * np.tanh(m) / m


def hntanh_jacobian_error(rng, n: int, p: float, count: int, h: float = 5e-5) -> float:
    """Closed-form Jacobian against a 5-point central stencil.

    The stencil runs in extended precision and reaches at most ``2h = 1e-4``
    from the sample, and coordinates closer than that to the ``|x|^p`` kink at
    zero are redrawn, so neither round-off nor the kink pollutes the oracle.
    """
    worst = 0.0
    for _ in range(count):
        c = sample_pnorm_ball(rng, n, p)
        while (np.abs(c) < 2 * h).any():
            c = sample_pnorm_ball(rng, n, p)
        jac = hntanh_jacobian(c, p)
        num = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n, dtype=np.longdouble)
            e[j] = h
            f = [_hntanh_extended(c + k * e, p) for k in (-2, -1, 1, 2)]
            num[:, j] = ((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * np.longdouble(h))).astype(np.float64)
        worst = max(worst, _rel(jac, num))
    return worst


def tiny_model_config() -> NumerionConfig:
    return NumerionConfig(lookback=16, horizon=4, channels=2, patch_levels=2, embed_dim=8,
                          rhr_layers=2, rhr_hidden=4, dropout=0.0)


def model_gradient_errors(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Per-tensor grad_check of the MAE loss of the tiny all-space model."""
    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    for t in params.named().values():
        # move biases off zero so every code path carries signal
        t.data += 0.1 * rng.standard_normal(t.shape)
    x = rng.standard_normal((3, cfg.channels, cfg.lookback))
    y = rng.standard_normal((3, cfg.channels, cfg.horizon))
    named = params.named()
    errors = {}
    for name, tensor in named.items():
        for t in named.values():
            t.requires_grad = t is tensor
        errors[name] = grad_check(lambda _: mae_loss(numerion_forward(x, params, cfg)[0], y), tensor, h)
    for t in named.values():
        t.requires_grad = True
    return errors


def run_suite(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def rnd(*shape):
        return Tensor(rng.standard_normal(shape))

    out.append(_timed("tanh", 1e-6, lambda: grad_check(lambda a: op_sum(op_tanh(a)), rnd(100))))
    out.append(_timed("gelu", 1e-5, lambda: grad_check(
        lambda a: op_sum(op_mul(op_gelu(a), Tensor(np.linspace(-1, 1, 100)))), rnd(100))))
    w = Tensor(rng.standard_normal((4, 5)))
    out.append(_timed("softmax", 1e-6, lambda: grad_check(
        lambda a: op_sum(op_mul(op_softmax(a, axis=0), w)), rnd(4, 5))))
    b = rnd(3, 2)
    out.append(_timed("matmul", 1e-6, lambda: grad_check(lambda a: op_sum(op_matmul(a, b)), rnd(4, 3))))
    out.append(_timed("gather (repeated indices)", 1e-6, lambda: grad_check(
        lambda a: op_sum(op_mul(op_gather(a, [2, 0, 2, 1, 2]), Tensor([1.0, 2.0, 3.0, 4.0, 5.0]))),
        rnd(3))))
    c2 = rnd(2, 3)
    out.append(_timed("concat + mean", 1e-6, lambda: grad_check(
        lambda a: op_sum(op_mul(op_mean(op_concat([a, c2], axis=0), axis=1), Tensor([1.0, -2, 3, 0.5]))),
        rnd(2, 3))))
    for n in (2, 4, 8, 16):
        for p in (2.0, 3.0, 6.0):
            weights = Tensor(rng.standard_normal((5, n)))
            x0 = np.stack([sample_pnorm_ball(rng, n, p) for _ in range(5)])
            out.append(_timed(f"hntanh composite n={n} p={p:g}", 1e-5, lambda: grad_check(
                lambda a: op_sum(op_mul(hntanh(a, p), weights)), Tensor(x0.copy()))))
    count = 20 if quick else 125
    for n in (2, 4, 8, 16):
        out.append(_timed(f"hntanh closed-form Jacobian n={n}", 1e-5, lambda: max(
            hntanh_jacobian_error(rng, n, p, count) for p in (2.0, 3.0, 6.0))))

    def rhr():
        params = init_rhr_mlp(3, 4, 2, 2, 4, rng)
        tab = table_for_dim(4)
        for t in params.tensors().values():
            t.data += 0.1 * rng.standard_normal(t.shape)
        x = Tensor(rng.standard_normal((5, 3)))
        wts = Tensor(rng.standard_normal((5, 2)))
        errs = [grad_check(lambda a: op_sum(op_mul(rhr_mlp(a, params, tab), wts)), x)]
        for t in params.tensors().values():
            errs.append(grad_check(lambda a: op_sum(op_mul(rhr_mlp(x, params, tab), wts)), t))
        return max(errs)

    out.append(_timed("rhr_mlp n=4 widths 3-4-4-2", 1e-4, rhr))
    if not quick:
        t0 = time.perf_counter()
        errors = model_gradient_errors(seed)
        worst = max(errors, key=errors.get)
        out.append(CheckResult(f"full model, all tensors (worst: {worst})", errors[worst], 1e-4,
                               time.perf_counter() - t0))
    return out


def backward_smoke() -> bool:
    """``sum(x**2)`` has gradient ``2x``."""
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    backward(op_sum(op_mul(x, x)))
    return bool(np.allclose(x.grad, 2 * x.data))


__all__ = ["CheckResult", "model_gradient_errors", "run_suite", "sample_pnorm_ball", "tiny_model_config"]

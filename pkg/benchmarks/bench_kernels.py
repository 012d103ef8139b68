"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Shapes follow a default-configuration training batch (128 windows, 7
channels, hidden width 64), so the HNTanh rows are 128*7*64 / n elements.
"""

import argparse
import timeit

import numpy as np

from numerion._kernels import _fallback
from numerion.algebra import table_for_dim

try:
    from numerion._kernels import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

ELEMENTS = 128 * 7 * 64


def cases(rng):
    for n in (2, 4, 8, 16):
        x = rng.standard_normal((ELEMENTS // n, n))
        g = rng.standard_normal(x.shape)
        _, norms = _fallback.hntanh_forward(x, 6.0, 1e-12)
        yield f"hntanh_forward n={n:<2}", lambda m, x=x: m.hntanh_forward(x, 6.0, 1e-12)
        yield f"hntanh_backward n={n:<2}", lambda m, x=x, g=g, s=norms: m.hntanh_backward(x, s, g, 6.0, 1e-12)
    for n in (4, 16):
        t = table_for_dim(n)
        sel = np.ascontiguousarray(t.select, dtype=np.int64)
        sign = np.ascontiguousarray(t.sign, dtype=np.float64)
        a, b = rng.standard_normal((2, 20000, n))
        yield f"hmul_left n={n:<2}", lambda m, a=a, b=b: m.hmul_left(a, b, sel, sign)
    x = rng.standard_normal(96)
    yield "dft N=96", lambda m: m.dft(x)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(rng):
        number = 3 if not name.startswith("dft") else 200
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=number, repeat=args.repeat)) / number
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=number, repeat=args.repeat)) / number
        print(f"{name:<22} {t_py * 1e3:10.3f} {t_c * 1e3:10.3f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()

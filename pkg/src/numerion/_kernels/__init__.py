"""Hot loops behind the layers and the spectral analysis.

The Cython extension ``_ckernels`` is used when it was compiled; otherwise
the numpy implementations in ``_fallback`` are selected.  Setting
``NUMERION_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"

if not os.environ.get("NUMERION_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _fallback
    else:
        BACKEND = "cython"
else:
    _impl = _fallback

# numpy's vectorized tanh and power beat the per-row libm calls of the
# compiled forward at every dimension, so the forward stays on numpy
hntanh_forward = _fallback.hntanh_forward
hntanh_backward = _impl.hntanh_backward
hmul_left = _impl.hmul_left
dft = _impl.dft

__all__ = ["BACKEND", "hntanh_forward", "hntanh_backward", "hmul_left", "dft"]

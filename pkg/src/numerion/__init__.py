"""Numerion: forecasting with parallel MLPs in real and hypercomplex spaces."""

from numerion._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

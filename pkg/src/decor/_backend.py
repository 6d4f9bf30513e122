"""Pick the compiled kernels when available.

Set ``DECOR_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("DECOR_PURE_PYTHON"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"

backward_energy = kernels.backward_energy
sinc_resample = kernels.sinc_resample

__all__ = ["BACKEND", "backward_energy", "sinc_resample"]

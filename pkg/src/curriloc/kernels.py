"""Backend selection for the hot kernels.

The compiled extension is used when it was built; setting the environment
variable ``CURRILOC_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
nearest_index = _pykernels.nearest_index
circular_box_blur = _pykernels.circular_box_blur

if not os.environ.get("CURRILOC_PURE_PYTHON"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        nearest_index = _ckernels.nearest_index
        circular_box_blur = _ckernels.circular_box_blur

__all__ = ["BACKEND", "nearest_index", "circular_box_blur"]

"""Kernel backend selection.

The compiled Cython core is used when importable; otherwise the numpy
fallback. Set MSDSEG_KERNELS=numpy or =compiled to force a backend
(=compiled raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import numpy_backend

_choice = os.environ.get("MSDSEG_KERNELS", "auto")
if _choice not in ("auto", "compiled", "numpy"):
    raise ImportError(f"MSDSEG_KERNELS must be auto|compiled|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = numpy_backend
else:
    try:
        from . import _fastcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = numpy_backend

BACKEND = _impl.BACKEND_NAME
conv_output_size = _impl.conv_output_size
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
resize_bilinear = _impl.resize_bilinear
resize_bilinear_backward = _impl.resize_bilinear_backward

"""Hot-kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``CLEVER_KERNELS=numpy`` to force the fallback.
"""
import os

from . import _kernels_py

_forced = os.environ.get("CLEVER_KERNELS", "").lower()

if _forced == "numpy":
    _impl = _kernels_py
else:
    try:
        from . import _kernels_cy as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py

BACKEND = _impl.BACKEND
bilinear_sample = _impl.bilinear_sample
bilinear_sample_adjoint = _impl.bilinear_sample_adjoint
blur_separable = _impl.blur_separable
rgb_to_hsv = _impl.rgb_to_hsv
hsv_to_rgb = _impl.hsv_to_rgb
im2col_3x3 = _impl.im2col_3x3
col2im_3x3 = _impl.col2im_3x3

__all__ = [
    "BACKEND",
    "bilinear_sample",
    "bilinear_sample_adjoint",
    "blur_separable",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "im2col_3x3",
    "col2im_3x3",
]

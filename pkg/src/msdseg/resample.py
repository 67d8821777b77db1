"""Array-level resampling used by the data pipeline (not differentiated)."""

from __future__ import annotations

import numpy as np

from . import kernels


def resize_image_bilinear(image: np.ndarray, side: int) -> np.ndarray:
    """(C,H,W) float image to (C,side,side)."""
    if image.shape[1] == side and image.shape[2] == side:
        return image.astype(np.float64)
    out = kernels.resize_bilinear(image[None].astype(np.float64), side, side)
    return out[0]


def resize_mask_nearest(mask: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """(H,W) mask to (out_h,out_w) by pixel-center nearest neighbor.

    Nearest keeps binary masks binary, which masked average pooling requires.
    """
    out_w = out_h if out_w is None else out_w
    h, w = mask.shape
    if (h, w) == (out_h, out_w):
        return mask.astype(np.float64)
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return mask[rows[:, None], cols[None, :]].astype(np.float64)

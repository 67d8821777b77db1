"""Vectorized numpy implementations of the hot kernels.

This is the fallback backend; `msdseg.kernels` prefers the compiled Cython
core when it is available. Both backends share the exact contracts tested in
tests/test_kernels.py (agreement with naive loop oracles to 1e-12).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int, stride: int, dilation: int) -> np.ndarray:
    """Read-only view (N,C,kh,kw,OH,OW) of a padded input."""
    n, c = xp.shape[0], xp.shape[1]
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        (n, c, kh, kw, oh, ow),
        (sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int, dilation: int) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    oh = conv_output_size(x.shape[2], kh, stride, padding, dilation)
    ow = conv_output_size(x.shape[3], kw, stride, padding, dilation)
    win = _windows(_pad(x, padding), kh, kw, oh, ow, stride, dilation)
    out = np.tensordot(win, w, axes=([1, 2, 3], [1, 2, 3]))  # (N,OH,OW,K)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b[None, :, None, None]
    return out


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, gout: np.ndarray, stride: int, padding: int, dilation: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (gx, gw, gb) of a conv2d given the upstream gradient."""
    kh, kw = w.shape[2], w.shape[3]
    oh, ow = gout.shape[2], gout.shape[3]
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, oh, ow, stride, dilation)

    gb = gout.sum(axis=(0, 2, 3))
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 4, 5]))  # (K,C,kh,kw)

    # (N,OH,OW,C,kh,kw) -> accumulate back into the padded input per tap
    gwin = np.tensordot(gout, w, axes=(1, 0))
    gxp = np.zeros_like(xp)
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            gxp[:, :, hi : hi + stride * oh : stride, wj : wj + stride * ow : stride] += gwin[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp), gw, gb


def _interp_matrix(out_size: int, in_size: int) -> np.ndarray:
    """Dense (out,in) bilinear interpolation matrix, align-corners=false."""
    src = np.maximum((np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    f = src - i0
    mat = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(mat, (rows, i0), 1.0 - f)
    np.add.at(mat, (rows, i1), f)
    return mat


_MATRIX_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _matrix(out_size: int, in_size: int) -> np.ndarray:
    key = (out_size, in_size)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE[key] = _interp_matrix(out_size, in_size)
    return _MATRIX_CACHE[key]


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ah = _matrix(out_h, x.shape[2])
    aw = _matrix(out_w, x.shape[3])
    return np.ascontiguousarray(np.matmul(np.matmul(ah, x), aw.T))


def resize_bilinear_backward(gout: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    ah = _matrix(gout.shape[2], in_h)
    aw = _matrix(gout.shape[3], in_w)
    return np.ascontiguousarray(np.matmul(np.matmul(ah.T, gout), aw))

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: conv2d via C-built im2col buffers and bilinear resize.

The matrix products still go through BLAS (one np.dot per call); the win
over the numpy backend is the tight C construction of the column/scatter
buffers and the absence of per-call stride-trick plumbing. 1x1 stride-1
unpadded convs skip the column buffer entirely.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


def conv_output_size(int size, int k, int stride, int padding, int dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    # smallest o >= 0 with o*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t limit, Py_ssize_t count) noexcept nogil:
    # one past the largest o < count with o*stride + off < limit
    cdef Py_ssize_t h
    if limit - 1 - off < 0:
        return 0
    h = (limit - 1 - off) // stride + 1
    return count if h > count else h


cdef void _im2col(const double[:, :, ::1] x, double[:, ::1] col,
                  Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t OH, Py_ssize_t OW,
                  int stride, int padding, int dilation) noexcept nogil:
    """Fill (C*kh*kw, OH*OW) from one (C,H,W) image; col must start zeroed."""
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t c, i, j, oh, ow, ih0, iw0, ih, row, oh_lo, oh_hi, ow_lo, ow_hi
    cdef const double* xrow
    cdef double* crow
    for c in range(C):
        for i in range(kh):
            ih0 = i * dilation - padding
            oh_lo = _lo(ih0, stride)
            oh_hi = _hi(ih0, stride, H, OH)
            for j in range(kw):
                iw0 = j * dilation - padding
                ow_lo = _lo(iw0, stride)
                ow_hi = _hi(iw0, stride, W, OW)
                row = (c * kh + i) * kw + j
                for oh in range(oh_lo, oh_hi):
                    ih = oh * stride + ih0
                    xrow = &x[c, ih, iw0]
                    crow = &col[row, oh * OW]
                    if stride == 1:
                        for ow in range(ow_lo, ow_hi):
                            crow[ow] = xrow[ow]
                    else:
                        for ow in range(ow_lo, ow_hi):
                            crow[ow] = xrow[ow * stride]


cdef void _col2im(const double[:, ::1] col, double[:, :, ::1] gx,
                  Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t OH, Py_ssize_t OW,
                  int stride, int padding, int dilation) noexcept nogil:
    """Scatter-add a (C*kh*kw, OH*OW) gradient back onto one (C,H,W) image."""
    cdef Py_ssize_t C = gx.shape[0], H = gx.shape[1], W = gx.shape[2]
    cdef Py_ssize_t c, i, j, oh, ow, ih0, iw0, ih, row, oh_lo, oh_hi, ow_lo, ow_hi
    cdef const double* crow
    cdef double* xrow
    for c in range(C):
        for i in range(kh):
            ih0 = i * dilation - padding
            oh_lo = _lo(ih0, stride)
            oh_hi = _hi(ih0, stride, H, OH)
            for j in range(kw):
                iw0 = j * dilation - padding
                ow_lo = _lo(iw0, stride)
                ow_hi = _hi(iw0, stride, W, OW)
                row = (c * kh + i) * kw + j
                for oh in range(oh_lo, oh_hi):
                    ih = oh * stride + ih0
                    crow = &col[row, oh * OW]
                    xrow = &gx[c, ih, iw0]
                    if stride == 1:
                        for ow in range(ow_lo, ow_hi):
                            xrow[ow] += crow[ow]
                    else:
                        for ow in range(ow_lo, ow_hi):
                            xrow[ow * stride] += crow[ow]


def conv2d_forward(x_in, w_in, b_in, int stride, int padding, int dilation):
    x = np.ascontiguousarray(x_in, dtype=np.float64)
    w = np.ascontiguousarray(w_in, dtype=np.float64)
    b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t K = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t OH = conv_output_size(H, kh, stride, padding, dilation)
    cdef Py_ssize_t OW = conv_output_size(W, kw, stride, padding, dilation)
    cdef Py_ssize_t n

    w2d = w.reshape(K, C * kh * kw)
    out = np.empty((N, K, OH, OW), dtype=np.float64)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        for n in range(N):
            np.dot(w2d, x[n].reshape(C, H * W), out=out[n].reshape(K, H * W))
    else:
        col = np.zeros((C * kh * kw, OH * OW), dtype=np.float64)
        col_mv = col
        for n in range(N):
            if n:
                col[:] = 0.0
            _im2col(x[n], col_mv, kh, kw, OH, OW, stride, padding, dilation)
            np.dot(w2d, col, out=out[n].reshape(K, OH * OW))
    out += b[None, :, None, None]
    return out


def conv2d_backward(x_in, w_in, g_in, int stride, int padding, int dilation):
    x = np.ascontiguousarray(x_in, dtype=np.float64)
    w = np.ascontiguousarray(w_in, dtype=np.float64)
    g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t K = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t OH = g.shape[2], OW = g.shape[3]
    cdef Py_ssize_t n

    w2d = w.reshape(K, C * kh * kw)
    gb = g.sum(axis=(0, 2, 3))
    gw2d = np.zeros((K, C * kh * kw), dtype=np.float64)
    gx = np.zeros((N, C, H, W), dtype=np.float64)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        for n in range(N):
            g2d = g[n].reshape(K, H * W)
            gw2d += np.dot(g2d, x[n].reshape(C, H * W).T)
            np.dot(w2d.T, g2d, out=gx[n].reshape(C, H * W))
    else:
        col = np.zeros((C * kh * kw, OH * OW), dtype=np.float64)
        col_mv = col
        for n in range(N):
            if n:
                col[:] = 0.0
            _im2col(x[n], col_mv, kh, kw, OH, OW, stride, padding, dilation)
            g2d = g[n].reshape(K, OH * OW)
            gw2d += np.dot(g2d, col.T)
            gcol = np.dot(w2d.T, g2d)
            _col2im(gcol, gx[n], kh, kw, OH, OW, stride, padding, dilation)
    return gx, gw2d.reshape(K, C, kh, kw), gb


def resize_bilinear(x_in, int out_h, int out_w):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    i0_arr, i1_arr, fh_arr = _source_taps(out_h, H)
    j0_arr, j1_arr, fw_arr = _source_taps(out_w, W)
    cdef Py_ssize_t[::1] i0 = i0_arr, i1 = i1_arr, j0 = j0_arr, j1 = j1_arr
    cdef double[::1] fh = fh_arr, fw = fw_arr
    out_arr = np.empty((N, C, out_h, out_w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, oh, ow
    cdef double top, bot

    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(out_h):
                    for ow in range(out_w):
                        top = (1.0 - fw[ow]) * x[n, c, i0[oh], j0[ow]] + fw[ow] * x[n, c, i0[oh], j1[ow]]
                        bot = (1.0 - fw[ow]) * x[n, c, i1[oh], j0[ow]] + fw[ow] * x[n, c, i1[oh], j1[ow]]
                        out[n, c, oh, ow] = (1.0 - fh[oh]) * top + fh[oh] * bot
    return out_arr


def resize_bilinear_backward(g_in, int in_h, int in_w):
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], OH = g.shape[2], OW = g.shape[3]
    i0_arr, i1_arr, fh_arr = _source_taps(OH, in_h)
    j0_arr, j1_arr, fw_arr = _source_taps(OW, in_w)
    cdef Py_ssize_t[::1] i0 = i0_arr, i1 = i1_arr, j0 = j0_arr, j1 = j1_arr
    cdef double[::1] fh = fh_arr, fw = fw_arr
    gx_arr = np.zeros((N, C, in_h, in_w), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, oh, ow
    cdef double gv

    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(OH):
                    for ow in range(OW):
                        gv = g[n, c, oh, ow]
                        gx[n, c, i0[oh], j0[ow]] += (1.0 - fh[oh]) * (1.0 - fw[ow]) * gv
                        gx[n, c, i0[oh], j1[ow]] += (1.0 - fh[oh]) * fw[ow] * gv
                        gx[n, c, i1[oh], j0[ow]] += fh[oh] * (1.0 - fw[ow]) * gv
                        gx[n, c, i1[oh], j1[ow]] += fh[oh] * fw[ow] * gv
    return gx_arr


def _source_taps(int out_size, int in_size):
    src = np.maximum((np.arange(out_size) + 0.5) * (in_size / float(out_size)) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.intp), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return np.ascontiguousarray(i0), np.ascontiguousarray(i1), np.ascontiguousarray(src - i0)

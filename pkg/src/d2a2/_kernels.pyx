# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col/col2im and bilinear gather/scatter.

Signatures mirror d2a2._kernels_np; both backends must agree to floating
round-off.  float32 and float64 via a fused type.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()

ctypedef fused floating:
    float
    double


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c * kh * kw, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j, oy, ox, iy, ix, row, ox_lo, ox_hi
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        if stride == 1:
                            # each output row is one contiguous span of the input row
                            ox_lo = pad - j if pad - j > 0 else 0
                            ox_hi = w + pad - j if w + pad - j < wo else wo
                            for oy in range(ho):
                                iy = oy + i - pad
                                if iy < 0 or iy >= h or ox_hi <= ox_lo:
                                    continue
                                memcpy(&out[bi, row, oy * wo + ox_lo],
                                       &x[bi, ci, iy, ox_lo + j - pad],
                                       (ox_hi - ox_lo) * sizeof(floating))
                        else:
                            for oy in range(ho):
                                iy = oy * stride + i - pad
                                if iy < 0 or iy >= h:
                                    continue
                                for ox in range(wo):
                                    ix = ox * stride + j - pad
                                    if ix < 0 or ix >= w:
                                        continue
                                    out[bi, row, oy * wo + ox] = x[bi, ci, iy, ix]
    return out_arr


def col2im(floating[:, :, ::1] cols, int c, int h, int w, int kh, int kw,
           int stride, int pad):
    cdef Py_ssize_t b = cols.shape[0]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j, oy, ox, iy, ix, row
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                out[bi, ci, iy, ix] += cols[bi, row, oy * wo + ox]
    return out_arr


def bilinear_gather(floating[:, :, :, ::1] x, floating[:, ::1] ys, floating[:, ::1] xs):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t s = ys.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, s), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, si
    cdef long y0, x0, y1, x1
    cdef floating y, xx, ty, tx, w00, w01, w10, w11, acc
    cdef bint v00, v01, v10, v11
    with nogil:
        for bi in range(b):
            for si in range(s):
                y = ys[bi, si]
                xx = xs[bi, si]
                y0 = <long>y if y >= 0 else <long>y - 1
                x0 = <long>xx if xx >= 0 else <long>xx - 1
                y1 = y0 + 1
                x1 = x0 + 1
                ty = y - <floating>y0
                tx = xx - <floating>x0
                w00 = (1 - ty) * (1 - tx)
                w01 = (1 - ty) * tx
                w10 = ty * (1 - tx)
                w11 = ty * tx
                v00 = 0 <= y0 < h and 0 <= x0 < w
                v01 = 0 <= y0 < h and 0 <= x1 < w
                v10 = 0 <= y1 < h and 0 <= x0 < w
                v11 = 0 <= y1 < h and 0 <= x1 < w
                if not (v00 or v01 or v10 or v11):
                    continue
                for ci in range(c):
                    acc = 0
                    if v00:
                        acc += w00 * x[bi, ci, y0, x0]
                    if v01:
                        acc += w01 * x[bi, ci, y0, x1]
                    if v10:
                        acc += w10 * x[bi, ci, y1, x0]
                    if v11:
                        acc += w11 * x[bi, ci, y1, x1]
                    out[bi, ci, si] = acc
    return out_arr


def bilinear_backward(floating[:, :, :, ::1] x, floating[:, ::1] ys, floating[:, ::1] xs,
                      floating[:, :, ::1] gout, bint need_input, bint need_coords):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t s = ys.shape[1]
    dtype = np.float32 if floating is float else np.float64
    gin_arr = np.zeros((b, c, h, w), dtype=dtype) if need_input else None
    gys_arr = np.zeros((b, s), dtype=dtype) if need_coords else None
    gxs_arr = np.zeros((b, s), dtype=dtype) if need_coords else None
    cdef floating[:, :, :, ::1] gin = gin_arr if need_input else x[:0]
    cdef floating[:, ::1] gys = gys_arr if need_coords else ys[:0]
    cdef floating[:, ::1] gxs = gxs_arr if need_coords else xs[:0]
    cdef Py_ssize_t bi, ci, si
    cdef long y0, x0, y1, x1
    cdef floating y, xx, ty, tx, g, gy, gx, p00, p01, p10, p11
    cdef bint v00, v01, v10, v11
    with nogil:
        for bi in range(b):
            for si in range(s):
                y = ys[bi, si]
                xx = xs[bi, si]
                y0 = <long>y if y >= 0 else <long>y - 1
                x0 = <long>xx if xx >= 0 else <long>xx - 1
                y1 = y0 + 1
                x1 = x0 + 1
                ty = y - <floating>y0
                tx = xx - <floating>x0
                v00 = 0 <= y0 < h and 0 <= x0 < w
                v01 = 0 <= y0 < h and 0 <= x1 < w
                v10 = 0 <= y1 < h and 0 <= x0 < w
                v11 = 0 <= y1 < h and 0 <= x1 < w
                gy = 0
                gx = 0
                for ci in range(c):
                    g = gout[bi, ci, si]
                    if g == 0:
                        continue
                    if need_input:
                        if v00:
                            gin[bi, ci, y0, x0] += g * (1 - ty) * (1 - tx)
                        if v01:
                            gin[bi, ci, y0, x1] += g * (1 - ty) * tx
                        if v10:
                            gin[bi, ci, y1, x0] += g * ty * (1 - tx)
                        if v11:
                            gin[bi, ci, y1, x1] += g * ty * tx
                    if need_coords:
                        p00 = x[bi, ci, y0, x0] if v00 else 0
                        p01 = x[bi, ci, y0, x1] if v01 else 0
                        p10 = x[bi, ci, y1, x0] if v10 else 0
                        p11 = x[bi, ci, y1, x1] if v11 else 0
                        gy += g * ((p10 - p00) * (1 - tx) + (p11 - p01) * tx)
                        gx += g * ((p01 - p00) * (1 - ty) + (p11 - p10) * ty)
                if need_coords:
                    gys[bi, si] = gy
                    gxs[bi, si] = gx
    return gin_arr, gys_arr, gxs_arr

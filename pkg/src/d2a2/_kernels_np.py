"""NumPy implementations of the hot kernels.

The compiled module ``d2a2._kernels`` mirrors these signatures; whichever is
active is picked in :mod:`d2a2.backend`.  Everything here works on plain
ndarrays (float32 or float64) and knows nothing about autodiff.
"""

import numpy as np


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Unfold (B, C, H, W) into patch columns (B, C*kh*kw, Ho*Wo)."""
    b, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def col2im(cols, c, h, w, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add columns back onto (B, C, H, W)."""
    b = cols.shape[0]
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def bilinear_gather(x, ys, xs):
    """Sample x (B, C, H, W) at fractional positions, zeros outside.

    ys, xs: (B, S) row/column coordinates.  A neighbor pixel outside
    [0, H-1] x [0, W-1] contributes zero (zero-padding convention).
    Returns (B, C, S).
    """
    b, c, h, w = x.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    ty = (ys - y0).astype(x.dtype)
    tx = (xs - x0).astype(x.dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    xf = x.reshape(b, c, h * w)
    out = np.zeros((b, c, ys.shape[1]), dtype=x.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            wgt = (ty if dy else 1.0 - ty) * (tx if dx else 1.0 - tx)
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = np.where(valid, yy * w + xx, 0)
            vals = np.take_along_axis(xf, idx[:, None, :], axis=2)
            out += vals * (wgt * valid)[:, None, :]
    return out


def bilinear_backward(x, ys, xs, gout, need_input, need_coords):
    """Gradients of bilinear_gather.

    Returns (gin, gys, gxs); entries are None when not requested.
    gin: (B, C, H, W); gys, gxs: (B, S) summed over channels.
    """
    b, c, h, w = x.shape
    s = ys.shape[1]
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    ty = (ys - y0).astype(x.dtype)
    tx = (xs - x0).astype(x.dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    xf = x.reshape(b, c, h * w)

    gin = None
    gys = gxs = None
    if need_input:
        gin_flat = np.zeros(b * c * h * w, dtype=np.float64)
    if need_coords:
        gys = np.zeros((b, s), dtype=x.dtype)
        gxs = np.zeros((b, s), dtype=x.dtype)
    chan_base = (np.arange(b)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)

    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = np.where(valid, yy * w + xx, 0)
            wy = ty if dy else 1.0 - ty
            wx = tx if dx else 1.0 - tx
            if need_input:
                contrib = gout * ((wy * wx) * valid)[:, None, :]
                flat_idx = (chan_base + idx[:, None, :]).ravel()
                gin_flat += np.bincount(flat_idx, weights=contrib.ravel(),
                                        minlength=b * c * h * w)
            if need_coords:
                vals = np.take_along_axis(xf, idx[:, None, :], axis=2)
                vals = vals * valid[:, None, :]
                gv = (gout * vals).sum(axis=1)
                sy = 1.0 if dy else -1.0
                sx = 1.0 if dx else -1.0
                gys += gv * (sy * wx)
                gxs += gv * (sx * wy)
    if need_input:
        gin = gin_flat.reshape(b, c, h, w).astype(x.dtype, copy=False)
    return gin, gys, gxs

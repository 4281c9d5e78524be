"""Separable image resampling with cubic and linear kernels.

Conventions (also used by the degradation pipeline, so numbers reproduce
bit-for-bit): cubic convolution kernel with a = -0.5, half-pixel-center
coordinate mapping src = (dst + 0.5) / scale - 0.5, edge replication at the
borders, and, when downsampling, the kernel is stretched to the coarse grid
spacing (anti-aliasing).  Each output row of weights is normalized to sum
to one, so constants are reproduced exactly at every scale.

Resizing is linear in the input, so the backward pass is just the
transposed weight matrices; there are no trainable parameters.
"""

from fractions import Fraction

import numpy as np

from .autodiff import Tensor, as_tensor, _tape_for

# scales accepted by bicubic_resize; upsampling by 2..16, downsampling to 1/16
BICUBIC_SCALES = (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4),
                  Fraction(2), Fraction(4), Fraction(8), Fraction(16))


def as_scale(scale):
    """Normalize int/float/Fraction/str ('1/4') scale specs to a Fraction."""
    if isinstance(scale, Fraction):
        return scale
    if isinstance(scale, int):
        return Fraction(scale)
    if isinstance(scale, str):
        return Fraction(scale)
    if isinstance(scale, float):
        return Fraction(scale).limit_denominator(64)
    raise TypeError(f"cannot interpret scale {scale!r}")


def _cubic_kernel(t):
    # Keys kernel, a = -0.5
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    near = 1.5 * at3 - 2.5 * at2 + 1.0
    far = -0.5 * at3 + 2.5 * at2 - 4.0 * at + 2.0
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _linear_kernel(t):
    return np.maximum(0.0, 1.0 - np.abs(t))


_KERNELS = {"cubic": (_cubic_kernel, 2.0), "linear": (_linear_kernel, 1.0)}

_matrix_cache = {}


def resize_matrix(n_in, n_out, kind="cubic"):
    """(n_out, n_in) float64 weight matrix for one axis."""
    key = (n_in, n_out, kind)
    cached = _matrix_cache.get(key)
    if cached is not None:
        return cached
    kernel, radius = _KERNELS[kind]
    scale = n_out / n_in
    if scale < 1.0:
        fscale = scale
        support = radius / scale
    else:
        fscale = 1.0
        support = radius
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        lo = int(np.ceil(center - support))
        hi = int(np.floor(center + support))
        js = np.arange(lo, hi + 1)
        w = kernel((center - js) * fscale)
        w /= w.sum()
        np.add.at(mat[i], np.clip(js, 0, n_in - 1), w)  # edge replication
    _matrix_cache[key] = mat
    return mat


def resize2d(x, scale, kind="cubic"):
    """Resize (B, C, H, W) by a rational factor along both spatial axes."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"resize2d expects rank-4 input, got {x.shape}")
    fr = as_scale(scale)
    b, c, h, w = x.shape
    if fr < 1:
        den = fr.denominator
        if h % den or w % den:
            raise ValueError(f"spatial dims {h}x{w} not divisible by {den} for downsampling")
    ho = int(h * fr)
    wo = int(w * fr)
    ah = resize_matrix(h, ho, kind).astype(x.dtype)
    aw = resize_matrix(w, wo, kind).astype(x.dtype)
    out = Tensor(np.matmul(np.matmul(ah, x.data), aw.T))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(np.matmul(np.matmul(ah.T, g), aw))

        tape.record(bwd)
    return out


def bicubic_resize(x, scale):
    """Cubic resize restricted to the supported scale set."""
    fr = as_scale(scale)
    if fr not in BICUBIC_SCALES:
        allowed = ", ".join(str(s) for s in BICUBIC_SCALES)
        raise ValueError(f"unsupported bicubic scale {fr} (allowed: {allowed})")
    return resize2d(x, fr, "cubic")


def bilinear_resize(x, scale):
    """Linear-kernel resize; used on the decoder upsampling path."""
    return resize2d(x, as_scale(scale), "linear")

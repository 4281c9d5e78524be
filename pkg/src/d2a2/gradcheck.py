"""Finite-difference verification of every differentiable operation.

Each registered check builds small float64 inputs, evaluates a random-
projection scalar loss through the tape, and compares every analytic
gradient against central differences (step 1e-5).  Inputs are resampled
away from non-smooth points (integer lattice for bilinear sampling, zero
for leaky-relu, ties for the L1 loss), where the comparison would be
ill-defined.
"""

import numpy as np

from . import autodiff as ad
from .dda import (DeformConvParams, LdaParams, OffsetField, deform_conv2d,
                  lda_forward, predict_offsets)
from .losses import l1_loss
from .mfa import Conv, gated_conv, pixel_attention
from .resample import bicubic_resize, bilinear_resize

FD_STEP = 1e-5
TOLERANCE = 1e-4
# below this magnitude the comparison switches from relative to absolute
REL_FLOOR = 1e-2


def rel_error(analytic, numeric):
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(loss_fn, tensors, h=FD_STEP):
    """Max relative error between taped gradients of loss_fn() and central
    differences, over every element of every tensor in `tensors`.

    loss_fn must re-evaluate the scalar loss from the tensors' current
    data; FD evaluations run without an active tape.
    """
    for t in tensors:
        t.zero_grad()
    with ad.record() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(loss_fn().data)
            flat[i] = keep - h
            down = float(loss_fn().data)
            flat[i] = keep
            nflat[i] = (up - down) / (2 * h)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def projection_loss(make_outputs, seed=7):
    """loss_fn summing each output against a fixed random projection."""
    rng = np.random.default_rng(seed)
    projs = None

    def loss_fn():
        nonlocal projs
        outs = make_outputs()
        if not isinstance(outs, (tuple, list)):
            outs = (outs,)
        if projs is None:
            projs = [ad.Tensor(rng.standard_normal(o.shape)) for o in outs]
        total = None
        for o, r in zip(outs, projs):
            term = ad.tensor_sum(ad.mul(o, r))
            total = term if total is None else ad.add(total, term)
        return total

    return loss_fn


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return ad.Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.1):
    d = rng.uniform(-1, 1, shape)
    while (np.abs(d) < margin).any():
        bad = np.abs(d) < margin
        d[bad] = rng.uniform(-1, 1, bad.sum())
    return ad.Tensor(d, requires_grad=True)


def _frac_coords(rng, b, ho, wo, h, w):
    """Coordinates whose fractional parts stay in [0.2, 0.8] (off-lattice)."""
    yi = rng.integers(-1, h, (b, 1, ho, wo)).astype(float)
    xi = rng.integers(-1, w, (b, 1, ho, wo)).astype(float)
    fy = rng.uniform(0.2, 0.8, (b, 1, ho, wo))
    fx = rng.uniform(0.2, 0.8, (b, 1, ho, wo))
    return ad.Tensor(np.concatenate([yi + fy, xi + fx], axis=1), requires_grad=True)


# ---------------------------------------------------------------------------
# checks


def _check_conv2d():
    rng = np.random.default_rng(11)
    x = _rand(rng, (1, 2, 5, 5))
    w = ad.Parameter("w", rng.standard_normal((3, 2, 3, 3)) * 0.5)
    b = ad.Parameter("b", rng.standard_normal(3) * 0.1)
    return check_gradients(projection_loss(lambda: ad.conv2d(x, w, b, 1, 1)), [x, w, b])


def _check_conv2d_strided():
    rng = np.random.default_rng(12)
    x = _rand(rng, (2, 3, 6, 6))
    w = ad.Parameter("w", rng.standard_normal((4, 3, 3, 3)) * 0.5)
    b = ad.Parameter("b", rng.standard_normal(4) * 0.1)
    return check_gradients(projection_loss(lambda: ad.conv2d(x, w, b, 2, 1)), [x, w, b])


def _check_linear():
    rng = np.random.default_rng(13)
    x = _rand(rng, (4, 8))
    w = ad.Parameter("w", rng.standard_normal((8, 8)) * 0.5)
    b = ad.Parameter("b", rng.standard_normal(8) * 0.1)
    return check_gradients(projection_loss(lambda: ad.linear(x, w, b)), [x, w, b])


def _check_sigmoid():
    rng = np.random.default_rng(14)
    x = _rand(rng, (2, 3, 4, 4), -3, 3)
    return check_gradients(projection_loss(lambda: ad.sigmoid(x)), [x])


def _check_leaky_relu():
    rng = np.random.default_rng(15)
    x = _away_from_zero(rng, (2, 3, 4, 4))
    return check_gradients(projection_loss(lambda: ad.leaky_relu(x, 0.2)), [x])


def _check_elementwise():
    rng = np.random.default_rng(16)
    a = _rand(rng, (2, 4, 4, 4))
    b = _rand(rng, (2, 4, 4, 4))
    per_c = _rand(rng, (2, 4, 1, 1))

    def make():
        return (ad.mul(ad.add(a, b), ad.sub(a, per_c)),
                ad.div(a, ad.add(ad.mul(b, b), 2.0)))

    return check_gradients(projection_loss(make), [a, b, per_c])


def _check_concat_split():
    rng = np.random.default_rng(17)
    a = _rand(rng, (1, 2, 4, 4))
    b = _rand(rng, (1, 3, 4, 4))

    def make():
        return ad.split_channels(ad.concat_channels(a, b), [4, 1])

    return check_gradients(projection_loss(make), [a, b])


def _check_channel_stats():
    rng = np.random.default_rng(18)
    x = _rand(rng, (2, 3, 5, 5))
    return check_gradients(projection_loss(lambda: ad.channel_stats(x, 1e-5)), [x])


def _check_bilinear_sample():
    rng = np.random.default_rng(19)
    x = _rand(rng, (2, 3, 6, 6))
    coords = _frac_coords(rng, 2, 4, 4, 6, 6)
    return check_gradients(projection_loss(lambda: ad.bilinear_sample(x, coords)),
                           [x, coords])


def _check_bicubic_resize():
    rng = np.random.default_rng(20)
    x = _rand(rng, (1, 2, 6, 6))
    return check_gradients(projection_loss(lambda: bicubic_resize(x, 2)), [x])


def _check_bilinear_resize():
    rng = np.random.default_rng(21)
    x = _rand(rng, (1, 2, 6, 6))
    return check_gradients(projection_loss(lambda: bilinear_resize(x, 2)), [x])


def _check_lda_forward():
    rng = np.random.default_rng(22)
    f_rgb = _rand(rng, (2, 3, 5, 5))
    f_d = _rand(rng, (2, 3, 5, 5))
    params = LdaParams.create("lda", 3, 0.2, rng, init="he")
    return check_gradients(projection_loss(lambda: lda_forward(f_rgb, f_d, params)),
                           [f_rgb, f_d] + params.parameters())


def _check_predict_offsets():
    rng = np.random.default_rng(23)
    f_d = _rand(rng, (1, 2, 5, 5))
    f_rgb = _rand(rng, (1, 2, 5, 5))
    w = ad.Parameter("w", rng.standard_normal((27, 4, 3, 3)) * 0.3)
    b = ad.Parameter("b", rng.standard_normal(27) * 0.1)

    def make():
        field = predict_offsets(f_d, f_rgb, w, b)
        return field.offsets, field.modulation

    return check_gradients(projection_loss(make), [f_d, f_rgb, w, b])


def _check_deform_conv2d():
    rng = np.random.default_rng(24)
    x = _rand(rng, (1, 2, 6, 6))
    offs = ad.Tensor(rng.integers(-1, 2, (1, 18, 6, 6))
                     + rng.uniform(0.2, 0.8, (1, 18, 6, 6)), requires_grad=True)
    mod = ad.Tensor(rng.uniform(0.2, 0.8, (1, 9, 6, 6)), requires_grad=True)
    params = DeformConvParams.create("deform", 2, 3, rng)
    return check_gradients(
        projection_loss(lambda: deform_conv2d(x, OffsetField(offs, mod), params)),
        [x, offs, mod] + params.parameters())


def _check_gated_conv():
    rng = np.random.default_rng(25)
    f_rgb = _rand(rng, (1, 2, 5, 5))
    f_d = _rand(rng, (1, 2, 5, 5))
    feat = Conv("feat", 4, 2, 3, rng)
    gate = Conv("gate", 4, 2, 3, rng)
    return check_gradients(
        projection_loss(lambda: gated_conv(f_rgb, f_d, feat, gate)),
        [f_rgb, f_d] + feat.parameters() + gate.parameters())


def _check_pixel_attention():
    rng = np.random.default_rng(26)
    f_d = _rand(rng, (1, 3, 5, 5))
    f_masked = _rand(rng, (1, 3, 5, 5))
    reduce_conv = Conv("reduce", 6, 3, 1, rng)
    return check_gradients(
        projection_loss(lambda: pixel_attention(f_d, f_masked, reduce_conv)),
        [f_d, f_masked] + reduce_conv.parameters())


def _check_l1_loss():
    rng = np.random.default_rng(27)
    pred = _rand(rng, (2, 1, 4, 4))
    # keep |pred - target| > 0.1 so no FD step crosses the kink
    gap = np.where(rng.uniform(-1, 1, pred.shape) > 0, 1.0, -1.0) \
        * rng.uniform(0.1, 0.5, pred.shape)
    target = ad.Tensor(pred.data + gap)
    return check_gradients(lambda: l1_loss(pred, target), [pred])


CHECKS = {
    "conv2d": _check_conv2d,
    "conv2d_strided": _check_conv2d_strided,
    "linear": _check_linear,
    "sigmoid": _check_sigmoid,
    "leaky_relu": _check_leaky_relu,
    "elementwise": _check_elementwise,
    "concat_split": _check_concat_split,
    "channel_stats": _check_channel_stats,
    "bilinear_sample": _check_bilinear_sample,
    "bicubic_resize": _check_bicubic_resize,
    "bilinear_resize": _check_bilinear_resize,
    "lda_forward": _check_lda_forward,
    "predict_offsets": _check_predict_offsets,
    "deform_conv2d": _check_deform_conv2d,
    "gated_conv": _check_gated_conv,
    "pixel_attention": _check_pixel_attention,
    "l1_loss": _check_l1_loss,
}

SCOPES = {
    "tensor": ["conv2d", "conv2d_strided", "linear", "sigmoid", "leaky_relu",
               "elementwise", "concat_split", "channel_stats", "bilinear_sample",
               "bicubic_resize", "bilinear_resize"],
    "dda": ["lda_forward", "predict_offsets", "deform_conv2d"],
    "mfa": ["gated_conv", "pixel_attention"],
    "loss": ["l1_loss"],
}


def run(scope="all"):
    """Returns [(name, max_rel_err, passed)]; scope is 'all', an op name,
    or a group name from SCOPES."""
    if scope in ("all", None):
        names = list(CHECKS)
    elif scope in SCOPES:
        names = SCOPES[scope]
    elif scope in CHECKS:
        names = [scope]
    else:
        known = sorted(set(CHECKS) | set(SCOPES) | {"all"})
        raise ValueError(f"unknown gradcheck scope '{scope}' (known: {', '.join(known)})")
    results = []
    for name in names:
        err = CHECKS[name]()
        results.append((name, err, err < TOLERANCE))
    return results

"""Domain alignment and deformable convolution contracts."""

import numpy as np
import pytest

from d2a2 import autodiff as ad
from d2a2.dda import (DdaBlock, DeformConvParams, LdaParams, OffsetField,
                      deform_conv2d, lda_forward, predict_offsets)

from oracles import deform_conv_direct


def _pair(rng, shape=(2, 3, 6, 6), lo=0.2, hi=1.8):
    # positive-mean features keep identity MLPs transparent to leaky-relu
    return (ad.Tensor(rng.uniform(lo, hi, shape)),
            ad.Tensor(rng.uniform(lo, hi, shape)))


def test_lda_identity_roundtrip():
    rng = np.random.default_rng(0)
    f, _ = _pair(rng)
    params = LdaParams.identity("lda", 3)
    out = lda_forward(f, f, params)
    np.testing.assert_allclose(out.data, f.data, atol=1e-5)


def test_lda_mean_matches_depth_mean_with_identity_mlp():
    rng = np.random.default_rng(1)
    f_rgb, f_d = _pair(rng)
    params = LdaParams.identity("lda", 3)
    out = lda_forward(f_rgb, f_d, params)
    np.testing.assert_allclose(out.data.mean(axis=(2, 3)), f_d.data.mean(axis=(2, 3)),
                               atol=1e-5)


def test_lda_mean_equals_mlp_mu_for_random_mlps():
    rng = np.random.default_rng(2)
    for trial in range(10):
        f_rgb = ad.Tensor(rng.standard_normal((2, 4, 5, 5)))
        f_d = ad.Tensor(rng.standard_normal((2, 4, 5, 5)))
        params = LdaParams.create("lda", 4, 0.2, rng, init="he")
        out = lda_forward(f_rgb, f_d, params)
        mu_d, _ = ad.channel_stats(f_d, params.epsilon)
        expect = params.mlp_mu(ad.reshape(mu_d, (2, 4))).data
        np.testing.assert_allclose(out.data.mean(axis=(2, 3)), expect, atol=1e-5)


def test_lda_channel_mismatch_raises():
    params = LdaParams.identity("lda", 3)
    with pytest.raises(ValueError, match="mismatch"):
        lda_forward(ad.Tensor(np.zeros((1, 3, 4, 4))),
                    ad.Tensor(np.zeros((1, 2, 4, 4))), params)


def test_predict_offsets_zero_conv_gives_identity_field():
    rng = np.random.default_rng(3)
    f_d, f_rgb = _pair(rng, (1, 2, 5, 5))
    w = ad.Parameter("w", np.zeros((27, 4, 3, 3)))
    b = ad.Parameter("b", np.zeros(27))
    field = predict_offsets(f_d, f_rgb, w, b)
    assert field.offsets.shape == (1, 18, 5, 5)
    assert field.modulation.shape == (1, 9, 5, 5)
    np.testing.assert_array_equal(field.offsets.data, 0.0)
    np.testing.assert_array_equal(field.modulation.data, 0.5)


def test_predict_offsets_preserves_spatial_dims():
    rng = np.random.default_rng(4)
    f_d, f_rgb = _pair(rng, (2, 3, 7, 9), 0, 1)
    w = ad.Parameter("w", rng.standard_normal((27, 6, 3, 3)) * 0.1)
    b = ad.Parameter("b", np.zeros(27))
    field = predict_offsets(f_d, f_rgb, w, b)
    assert field.offsets.shape[2:] == (7, 9)
    assert (field.modulation.data > 0).all() and (field.modulation.data < 1).all()


def _zero_field(b, h, w, dtype=np.float64):
    return OffsetField(ad.Tensor(np.zeros((b, 18, h, w), dtype=dtype)),
                       ad.Tensor(np.ones((b, 9, h, w), dtype=dtype)))


def test_deform_reduces_to_conv2d_with_zero_offsets():
    rng = np.random.default_rng(5)
    for trial in range(50):
        b, ci, co = 1, int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h = w = int(rng.integers(4, 8))
        x = ad.Tensor(rng.standard_normal((b, ci, h, w)))
        params = DeformConvParams.create("d", ci, co, rng)
        out = deform_conv2d(x, _zero_field(b, h, w), params)
        ref = ad.conv2d(x, params.weight, params.bias, stride=1, padding=1)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-6)


def test_deform_zero_modulation_yields_bias():
    rng = np.random.default_rng(6)
    x = ad.Tensor(rng.standard_normal((1, 2, 5, 5)))
    params = DeformConvParams.create("d", 2, 3, rng)
    field = OffsetField(ad.Tensor(np.zeros((1, 18, 5, 5))),
                        ad.Tensor(np.zeros((1, 9, 5, 5))))
    out = deform_conv2d(x, field, params)
    np.testing.assert_allclose(out.data, params.bias.data[None, :, None, None]
                               * np.ones((1, 3, 5, 5)), atol=1e-12)


def test_deform_integer_shift_matches_shifted_conv_and_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 1, 6, 6))
    params = DeformConvParams.create("d", 1, 1, rng)
    offsets = np.zeros((1, 18, 6, 6))
    offsets[:, 1::2] = 1.0  # (dy, dx) = (0, 1) at every tap
    modulation = np.ones((1, 9, 6, 6))
    out = deform_conv2d(ad.Tensor(x), OffsetField(ad.Tensor(offsets), ad.Tensor(modulation)),
                        params)
    shifted = np.zeros_like(x)
    shifted[:, :, :, :-1] = x[:, :, :, 1:]  # shift left, zero-filled border
    ref_conv = ad.conv2d(ad.Tensor(shifted), params.weight, params.bias, 1, 1)
    # column 0 is excluded: there the shifted image zero-fills a position the
    # deformable taps still read inside the original image
    np.testing.assert_allclose(out.data[:, :, :, 1:], ref_conv.data[:, :, :, 1:], atol=1e-6)
    ref_direct = deform_conv_direct(x, offsets, modulation, params.weight.data,
                                    params.bias.data)
    np.testing.assert_allclose(out.data, ref_direct, atol=1e-6)


def test_deform_matches_direct_oracle_fractional():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 2, 5, 5))
    offsets = rng.uniform(-1.5, 1.5, (2, 18, 5, 5))
    modulation = rng.uniform(0, 1, (2, 9, 5, 5))
    params = DeformConvParams.create("d", 2, 3, rng)
    out = deform_conv2d(ad.Tensor(x), OffsetField(ad.Tensor(offsets), ad.Tensor(modulation)),
                        params)
    ref = deform_conv_direct(x, offsets, modulation, params.weight.data, params.bias.data)
    np.testing.assert_allclose(out.data, ref, atol=1e-10)


def test_deform_nan_offsets_raise():
    rng = np.random.default_rng(9)
    x = ad.Tensor(rng.standard_normal((1, 1, 4, 4)))
    offsets = np.zeros((1, 18, 4, 4))
    offsets[0, 0, 0, 0] = np.nan
    params = DeformConvParams.create("d", 1, 1, rng)
    with pytest.raises(ValueError, match="non-finite"):
        deform_conv2d(x, OffsetField(ad.Tensor(offsets), ad.Tensor(np.ones((1, 9, 4, 4)))),
                      params)


def test_deform_locality_bounded_offsets():
    rng = np.random.default_rng(10)
    h = w = 12
    x = rng.standard_normal((1, 1, h, w))
    offsets = rng.uniform(-1.3, 1.3, (1, 18, h, w))
    modulation = rng.uniform(0.2, 1.0, (1, 9, h, w))
    params = DeformConvParams.create("d", 1, 1, rng)
    field = OffsetField(ad.Tensor(offsets), ad.Tensor(modulation))
    base = deform_conv2d(ad.Tensor(x), field, params).data
    x2 = x.copy()
    x2[0, 0, 6, 6] += 10.0
    bumped = deform_conv2d(ad.Tensor(x2), field, params).data
    changed = np.argwhere(np.abs(bumped - base)[0, 0] > 1e-9)
    radius = 1 + int(np.ceil(1.3))  # tap reach + offset bound
    assert changed.size > 0
    assert (np.abs(changed - 6).max() <= radius + 1)  # +1 bilinear support


def test_dda_block_zero_init_acts_as_half_gain_conv():
    # zero offset conv -> zero offsets, modulation 0.5 -> 0.5 * standard conv
    rng = np.random.default_rng(11)
    blk = DdaBlock("dda", 3, rng, lda_mode="none", dga_enabled=True)
    f_rgb, f_d = _pair(rng, (1, 3, 6, 6))
    out = blk(f_rgb, f_d)
    half_w = ad.Parameter("hw", blk.deform.weight.data * 0.5)
    ref = ad.conv2d(f_rgb, half_w, blk.deform.bias, 1, 1)
    np.testing.assert_allclose(out.data, ref.data, atol=1e-10)


def test_dda_reduction_identity_full_block():
    # identity MLPs + zero offsets + saturated modulation -> plain conv of
    # the domain-normalized rgb features
    rng = np.random.default_rng(12)
    c = 3
    blk = DdaBlock("dda", c, rng, lda_mode="lda", dga_enabled=True)
    blk.lda = LdaParams.identity("dda.lda", c)
    blk.offset_b.data = np.concatenate([np.zeros(18), np.full(9, 40.0)])  # sigmoid -> 1
    f_rgb, f_d = _pair(rng, (1, c, 6, 6))
    out = blk(f_rgb, f_d)
    aligned = lda_forward(f_rgb, f_d, blk.lda)
    ref = ad.conv2d(aligned, blk.deform.weight, blk.deform.bias, 1, 1)
    np.testing.assert_allclose(out.data, ref.data, atol=1e-5)


def test_dda_toggles():
    rng = np.random.default_rng(13)
    f_rgb, f_d = _pair(rng, (1, 3, 6, 6))
    # no LDA: raw rgb goes into offset prediction and the deform conv
    blk = DdaBlock("a", 3, rng, lda_mode="none", dga_enabled=True)
    collect = {}
    blk(f_rgb, f_d, collect=collect)
    assert collect["rgb_lda"] is f_rgb
    # no DGA: returns the LDA output directly
    blk2 = DdaBlock("b", 3, np.random.default_rng(14), lda_mode="lda", dga_enabled=False)
    out2 = blk2(f_rgb, f_d)
    ref2 = lda_forward(f_rgb, f_d, blk2.lda)
    np.testing.assert_allclose(out2.data, ref2.data, atol=1e-12)


def test_dda_shape_preserved():
    rng = np.random.default_rng(15)
    blk = DdaBlock("dda", 4, rng)
    f_rgb, f_d = _pair(rng, (2, 4, 8, 6))
    assert blk(f_rgb, f_d).shape == (2, 4, 8, 6)


def test_dda_offset_conv_receives_gradient():
    rng = np.random.default_rng(16)
    blk = DdaBlock("dda", 3, rng)
    # perturb the offset conv so offsets are nonzero (grad through coords)
    blk.offset_w.data = rng.standard_normal(blk.offset_w.shape) * 0.1
    f_rgb, f_d = _pair(rng, (1, 3, 6, 6))
    with ad.record() as tape:
        loss = ad.tensor_sum(blk(f_rgb, f_d))
    tape.backward(loss)
    assert blk.offset_w.grad is not None
    assert np.abs(blk.offset_w.grad).max() > 0


def test_gradcheck_scope_dda():
    from d2a2 import gradcheck
    for name, err, ok in gradcheck.run("dda"):
        assert ok, f"{name} failed with {err:.2e}"

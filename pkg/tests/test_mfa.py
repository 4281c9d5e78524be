"""Gated convolution and attention contracts."""

import numpy as np
import pytest

from d2a2 import autodiff as ad
from d2a2.mfa import (ChannelAttention, Conv, MfaBlock, SpatialAttention,
                      gated_conv, pixel_attention)


def _features(rng, shape=(1, 3, 6, 6)):
    return ad.Tensor(rng.standard_normal(shape)), ad.Tensor(rng.standard_normal(shape))


def _zeroed(conv, bias_value):
    conv.weight.data[:] = 0.0
    conv.bias.data[:] = bias_value
    return conv


def test_open_gate_recovers_plain_conv():
    rng = np.random.default_rng(0)
    f_rgb, f_d = _features(rng)
    feat = Conv("feat", 6, 3, 3, rng)
    gate = _zeroed(Conv("gate", 6, 3, 3, rng), +20.0)
    masked, g = gated_conv(f_rgb, f_d, feat, gate)
    ref = ad.leaky_relu(feat(ad.concat_channels(f_rgb, f_d)), 0.2)
    np.testing.assert_allclose(masked.data, ref.data, rtol=1e-6)
    assert g.data.min() > 0.999


def test_closed_gate_zeroes_features():
    rng = np.random.default_rng(1)
    f_rgb, f_d = _features(rng)
    feat = Conv("feat", 6, 3, 3, rng)
    gate = _zeroed(Conv("gate", 6, 3, 3, rng), -20.0)
    masked, g = gated_conv(f_rgb, f_d, feat, gate)
    assert np.abs(masked.data).max() < 1e-6
    assert g.data.max() < 1e-3


def test_gate_strictly_inside_unit_interval():
    rng = np.random.default_rng(2)
    f_rgb, f_d = _features(rng, (2, 4, 5, 5))
    feat = Conv("feat", 8, 4, 3, rng)
    gate = Conv("gate", 8, 4, 3, rng)
    _, g = gated_conv(f_rgb, f_d, feat, gate)
    assert (g.data > 0).all() and (g.data < 1).all()


def test_monotone_gating():
    # raising one gate logit weakly increases |f_masked| at that element
    rng = np.random.default_rng(3)
    f_rgb, f_d = _features(rng)
    feat = Conv("feat", 6, 3, 3, rng)
    gate = Conv("gate", 6, 3, 3, rng)
    masked_lo, _ = gated_conv(f_rgb, f_d, feat, gate)
    gate.bias.data[1] += 0.5
    masked_hi, _ = gated_conv(f_rgb, f_d, feat, gate)
    lo, hi = np.abs(masked_lo.data[0, 1]), np.abs(masked_hi.data[0, 1])
    assert (hi >= lo - 1e-12).all()
    untouched = [0, 2]
    np.testing.assert_array_equal(masked_lo.data[0, untouched], masked_hi.data[0, untouched])


def test_pixel_attention_saturated_identity():
    rng = np.random.default_rng(4)
    f_d, f_masked = _features(rng)
    reduce_conv = _zeroed(Conv("reduce", 6, 3, 1, rng), +20.0)
    out, a = pixel_attention(f_d, f_masked, reduce_conv)
    np.testing.assert_allclose(out.data, f_d.data, rtol=1e-5, atol=1e-6)
    assert a.shape == f_d.shape  # full (C, H, W) attention extent


def test_pixel_attention_zero_logits_halves_input():
    rng = np.random.default_rng(5)
    f_d, f_masked = _features(rng)
    reduce_conv = _zeroed(Conv("reduce", 6, 3, 1, rng), 0.0)
    out, a = pixel_attention(f_d, f_masked, reduce_conv)
    np.testing.assert_allclose(out.data, 0.5 * f_d.data, atol=1e-12)
    np.testing.assert_array_equal(a.data, np.full(f_d.shape, 0.5))


def test_attention_dimensionality_by_mode():
    rng = np.random.default_rng(6)
    f_d, f_masked = _features(rng, (2, 4, 6, 6))
    pa = Conv("pa", 8, 4, 1, rng)
    _, a_pa = pixel_attention(f_d, f_masked, pa)
    assert a_pa.shape == (2, 4, 6, 6)
    ca = ChannelAttention("ca", 4, rng)
    _, a_ca = ca(f_d, f_masked)
    assert a_ca.shape == (2, 4, 1, 1)  # constant over (H, W)
    sa = SpatialAttention("sa", rng)
    _, a_sa = sa(f_d, f_masked)
    assert a_sa.shape == (2, 1, 6, 6)  # constant over channels


def test_mfa_diagnostics_are_the_forward_buffers():
    rng = np.random.default_rng(7)
    blk = MfaBlock("mfa", 3, rng)
    f_rgb, f_d = _features(rng)
    collect = {}
    blk(f_rgb, f_d, collect=collect)
    assert set(collect) >= {"gate", "attention"}
    # same objects, not recomputed copies
    masked2, gate2 = None, None
    collect2 = {}
    out2 = blk(f_rgb, f_d, collect=collect2)
    assert collect2["gate"] is not collect["gate"]  # fresh forward, fresh tensors
    assert isinstance(collect["gate"], ad.Tensor)
    assert (collect["attention"].data > 0).all() and (collect["attention"].data < 1).all()


def test_mfa_shape_preserved_all_modes():
    rng = np.random.default_rng(8)
    f_rgb, f_d = _features(rng, (2, 4, 8, 8))
    for gc in (True, False):
        for mode in ("pa", "ca", "sa", "none"):
            blk = MfaBlock(f"m_{gc}_{mode}", 4, np.random.default_rng(9),
                           gc_enabled=gc, attention_mode=mode)
            assert blk(f_rgb, f_d).shape == (2, 4, 8, 8)


def test_mfa_residual_identity_with_zero_fusion():
    rng = np.random.default_rng(10)
    blk = MfaBlock("mfa", 3, rng)
    blk.fusion_conv.weight.data[:] = 0.0
    blk.fusion_conv.bias.data[:] = 0.0
    f_rgb, f_d = _features(rng)
    out = blk(f_rgb, f_d)
    np.testing.assert_array_equal(out.data, f_d.data)


def test_mfa_concat_baseline_has_no_gate_or_attention_params():
    rng = np.random.default_rng(11)
    blk = MfaBlock("mfa", 3, rng, gc_enabled=False, attention_mode="none")
    names = [p.name for p in blk.parameters()]
    assert not any("gate" in n or "reduce" in n for n in names)
    collect = {}
    f_rgb, f_d = _features(rng)
    blk(f_rgb, f_d, collect=collect)
    assert "gate" not in collect and "attention" not in collect


def test_gradcheck_scope_mfa():
    from d2a2 import gradcheck
    for name, err, ok in gradcheck.run("mfa"):
        assert ok, f"{name} failed with {err:.2e}"

"""Mask-to-pixel feature aggregation: gated convolution filters the aligned
RGB + depth features into masked features, and pixel attention uses them to
reweight the depth features element by element.  Channel and spatial
attention variants exist only as ablation substitutes."""

import numpy as np

from .autodiff import (Parameter, add, channel_max, channel_mean, channel_stats,
                       concat_channels, conv2d, leaky_relu, linear, mul, reshape,
                       sigmoid)
from .dda import he_normal


class Conv:
    """Convolution parameters bundled with their geometry."""

    def __init__(self, name, in_c, out_c, ksize, rng, dtype=np.float64, zero=False):
        shape = (out_c, in_c, ksize, ksize)
        w = np.zeros(shape, dtype=dtype) if zero else he_normal(rng, shape, in_c * ksize * ksize, dtype)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(out_c, dtype=dtype))
        self.padding = ksize // 2

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x, stride=1):
        return conv2d(x, self.weight, self.bias, stride=stride, padding=self.padding)


def gated_conv(f_rgb_aligned, f_d, feature_conv, gate_conv, slope=0.2):
    """Parallel feature/gate 3x3 convs on the channel concat.

    Returns (f_masked, gate): f_masked = act(feature(x)) * sigmoid(gate(x)).
    The gate tensor is the exact buffer used in the product, exported for
    diagnostics.
    """
    x = concat_channels(f_rgb_aligned, f_d)
    gate = sigmoid(gate_conv(x))
    f_masked = mul(leaky_relu(feature_conv(x), slope), gate)
    return f_masked, gate


def pixel_attention(f_d, f_masked, reduce_conv):
    """Full (C, H, W) sigmoid attention map applied to the depth features.

    a = sigmoid(reduce_conv(concat(f_d, f_masked))); returns (f_d * a, a).
    """
    a = sigmoid(reduce_conv(concat_channels(f_d, f_masked)))
    return mul(f_d, a), a


class ChannelAttention:
    """Squeeze-excite substitute: GAP -> bottleneck MLP -> per-channel gate."""

    def __init__(self, name, channels, rng, dtype=np.float64, slope=0.2):
        in_c = 2 * channels
        hidden = max(in_c // 4, 4)
        self.slope = slope
        self.w1 = Parameter(f"{name}.fc1.weight", he_normal(rng, (hidden, in_c), in_c, dtype))
        self.b1 = Parameter(f"{name}.fc1.bias", np.zeros(hidden, dtype=dtype))
        self.w2 = Parameter(f"{name}.fc2.weight", he_normal(rng, (channels, hidden), hidden, dtype))
        self.b2 = Parameter(f"{name}.fc2.bias", np.zeros(channels, dtype=dtype))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, f_d, f_masked):
        x = concat_channels(f_d, f_masked)
        b, c2 = x.shape[0], x.shape[1]
        pooled, _ = channel_stats(x, 0.0)
        v = reshape(pooled, (b, c2))
        v = linear(leaky_relu(linear(v, self.w1, self.b1), self.slope), self.w2, self.b2)
        a = sigmoid(reshape(v, (b, f_d.shape[1], 1, 1)))
        return mul(f_d, a), a


class SpatialAttention:
    """Channel mean + max -> 7x7 conv -> per-pixel scalar gate."""

    def __init__(self, name, rng, dtype=np.float64):
        self.conv = Conv(f"{name}.conv", 2, 1, 7, rng, dtype)

    def parameters(self):
        return self.conv.parameters()

    def __call__(self, f_d, f_masked):
        x = concat_channels(f_d, f_masked)
        stats = concat_channels(channel_mean(x), channel_max(x))
        a = sigmoid(self.conv(stats))
        return mul(f_d, a), a


class MfaBlock:
    """Gated conv -> attention -> fusion conv with a residual depth path.

    gc_enabled=False drops the gate (plain feature conv); attention_mode is
    'pa' | 'ca' | 'sa' | 'none'.  With residual on, out = f_d +
    fusion(enhanced), so zero fusion weights recover the depth stream.
    """

    def __init__(self, name, channels, rng, dtype=np.float64, gc_enabled=True,
                 attention_mode="pa", slope=0.2, residual=True):
        if attention_mode not in ("pa", "ca", "sa", "none"):
            raise ValueError(f"unknown attention_mode '{attention_mode}'")
        self.gc_enabled = gc_enabled
        self.attention_mode = attention_mode
        self.slope = slope
        self.residual = residual
        self.feature_conv = Conv(f"{name}.feature_conv", 2 * channels, channels, 3, rng, dtype)
        self.gate_conv = Conv(f"{name}.gate_conv", 2 * channels, channels, 3, rng, dtype) if gc_enabled else None
        if attention_mode == "pa":
            self.attn = Conv(f"{name}.reduce_conv", 2 * channels, channels, 1, rng, dtype)
        elif attention_mode == "ca":
            self.attn = ChannelAttention(f"{name}.ca", channels, rng, dtype, slope)
        elif attention_mode == "sa":
            self.attn = SpatialAttention(f"{name}.sa", rng, dtype)
        else:
            self.attn = None
        self.fusion_conv = Conv(f"{name}.fusion_conv", channels, channels, 3, rng, dtype)

    def parameters(self):
        ps = self.feature_conv.parameters()
        if self.gate_conv is not None:
            ps += self.gate_conv.parameters()
        if self.attn is not None:
            ps += self.attn.parameters()
        return ps + self.fusion_conv.parameters()

    def __call__(self, f_rgb_aligned, f_d, collect=None):
        if self.gc_enabled:
            f_masked, gate = gated_conv(f_rgb_aligned, f_d, self.feature_conv,
                                        self.gate_conv, self.slope)
            if collect is not None:
                collect["gate"] = gate
        else:
            x = concat_channels(f_rgb_aligned, f_d)
            f_masked = leaky_relu(self.feature_conv(x), self.slope)
        if self.attention_mode == "pa":
            enhanced, a = pixel_attention(f_d, f_masked, self.attn)
        elif self.attention_mode in ("ca", "sa"):
            enhanced, a = self.attn(f_d, f_masked)
        else:
            enhanced, a = f_masked, None
        if collect is not None and a is not None:
            collect["attention"] = a
        fused = self.fusion_conv(enhanced)
        return add(f_d, fused) if self.residual else fused

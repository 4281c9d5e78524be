"""Dynamic dual alignment: domain alignment of RGB features toward depth
statistics, offset prediction, and geometric alignment via modulated
deformable convolution.

The deformable convolution is assembled from the gradcheckable primitives:
per-tap bilinear sampling of the input at (pixel + tap offset + learned
displacement), modulation by the per-tap sigmoid scalar, then a pointwise
convolution with the 3x3 weights laid out tap-major.  This keeps every
gradient (input, weights, offsets, modulation) on the common tape.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Parameter, Tensor, add, bilinear_sample, channel_stats,
                       concat_channels, conv2d, div, leaky_relu, linear, mul,
                       reshape, sigmoid, split_channels, sub, transpose)

# fixed 3x3 tap offsets (dy, dx), row-major from (-1,-1) to (1,1)
TAP_GRID = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
NUM_TAPS = len(TAP_GRID)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Mlp(object):
    """Two linear layers (C -> C -> C) with leaky-relu between.

    init='identity' starts as the identity map (the built model uses this
    for both statistic paths, so domain alignment begins as classical
    adaptive instance normalization and training learns the deviation);
    init='he' draws fan-in-scaled weights.
    """

    def __init__(self, name, channels, slope, rng=None, dtype=np.float64,
                 init="identity"):
        self.slope = slope
        if init == "identity" or rng is None:
            w1 = np.eye(channels, dtype=dtype)
            w2 = np.eye(channels, dtype=dtype)
        elif init == "he":
            w1 = he_normal(rng, (channels, channels), channels, dtype)
            w2 = he_normal(rng, (channels, channels), channels, dtype)
        else:
            raise ValueError(f"unknown init '{init}'")
        self.w1 = Parameter(f"{name}.fc1.weight", w1)
        self.b1 = Parameter(f"{name}.fc1.bias", np.zeros(channels, dtype=dtype))
        self.w2 = Parameter(f"{name}.fc2.weight", w2)
        self.b2 = Parameter(f"{name}.fc2.bias", np.zeros(channels, dtype=dtype))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, v):
        return linear(leaky_relu(linear(v, self.w1, self.b1), self.slope), self.w2, self.b2)


@dataclass
class LdaParams:
    """Learnable domain alignment: separate MLPs for the mean and std paths."""

    mlp_mu: Mlp
    mlp_sigma: Mlp
    epsilon: float = 1e-5

    @classmethod
    def create(cls, name, channels, slope, rng, dtype=np.float64, epsilon=1e-5,
               init="identity"):
        return cls(Mlp(f"{name}.mlp_mu", channels, slope, rng, dtype, init),
                   Mlp(f"{name}.mlp_sigma", channels, slope, rng, dtype, init),
                   epsilon)

    @classmethod
    def identity(cls, name, channels, slope=0.2, dtype=np.float64, epsilon=1e-5):
        """MLPs initialized to the identity map (AdaIN reduction)."""
        return cls(Mlp(f"{name}.mlp_mu", channels, slope, None, dtype),
                   Mlp(f"{name}.mlp_sigma", channels, slope, None, dtype),
                   epsilon)

    def parameters(self):
        return self.mlp_mu.parameters() + self.mlp_sigma.parameters()


def lda_forward(f_rgb, f_d, params):
    """Normalize RGB features, denormalize with MLP-mapped depth statistics.

    out = mlp_sigma(sigma_d) * (f_rgb - mu_rgb) / sigma_rgb + mlp_mu(mu_d);
    the per-channel output mean equals mlp_mu(mu_d) exactly because the
    normalized features have zero spatial mean.
    """
    _check_aligned(f_rgb, f_d, "lda_forward")
    b, c = f_rgb.shape[0], f_rgb.shape[1]
    mu_r, sig_r = channel_stats(f_rgb, params.epsilon)
    mu_d, sig_d = channel_stats(f_d, params.epsilon)
    mu_p = reshape(params.mlp_mu(reshape(mu_d, (b, c))), (b, c, 1, 1))
    sig_p = reshape(params.mlp_sigma(reshape(sig_d, (b, c))), (b, c, 1, 1))
    return add(mul(sig_p, div(sub(f_rgb, mu_r), sig_r)), mu_p)


def instance_norm_align(f_rgb, epsilon=1e-5):
    """IN substitute for LDA: fixed mu'=0, sigma'=1."""
    mu, sig = channel_stats(f_rgb, epsilon)
    return div(sub(f_rgb, mu), sig)


def batch_norm_align(f_rgb, epsilon=1e-5):
    """BN substitute: same fixed substitution with batch-pooled statistics."""
    mu, sig = channel_stats(f_rgb, epsilon, over_batch=True)
    return div(sub(f_rgb, mu), sig)


@dataclass
class OffsetField:
    """Per-pixel tap displacements (dy, dx) and sigmoid modulation scalars."""

    offsets: Tensor      # (B, 2K, H, W), interleaved (dy, dx) per tap
    modulation: Tensor   # (B, K, H, W), in (0, 1)

    def __post_init__(self):
        if self.offsets.shape[1] != 2 * self.modulation.shape[1]:
            raise ValueError(f"offset channels {self.offsets.shape[1]} must be twice "
                             f"modulation channels {self.modulation.shape[1]}")

    @property
    def taps(self):
        return self.modulation.shape[1]


@dataclass
class DeformConvParams:
    """3x3 deformable convolution weights plus the fixed tap grid."""

    weight: Parameter    # (out_c, in_c, 3, 3)
    bias: Parameter      # (out_c,)
    tap_grid: tuple = field(default=TAP_GRID)

    @classmethod
    def create(cls, name, in_c, out_c, rng, dtype=np.float64):
        w = he_normal(rng, (out_c, in_c, 3, 3), in_c * 9, dtype)
        return cls(Parameter(f"{name}.weight", w),
                   Parameter(f"{name}.bias", np.zeros(out_c, dtype=dtype)))

    def parameters(self):
        return [self.weight, self.bias]


def predict_offsets(f_d, f_rgb_aligned, weight, bias, bound=0.0):
    """One 3x3 conv on [f_d, f_rgb_aligned] -> 2K raw offsets + K gate logits.

    Channel layout: [dy0, dx0, ..., dy8, dx8, m0, ..., m8].  With bound > 0
    the raw offsets are squashed through bound * tanh(raw / bound).
    """
    _check_aligned(f_d, f_rgb_aligned, "predict_offsets")
    k = NUM_TAPS
    x = concat_channels(f_d, f_rgb_aligned)
    raw = conv2d(x, weight, bias, stride=1, padding=1)
    if raw.shape[1] != 3 * k:
        raise ValueError(f"offset conv must emit {3 * k} channels, got {raw.shape[1]}")
    offs, logits = split_channels(raw, [2 * k, k])
    if bound > 0:
        offs = _tanh_bound(offs, bound)
    return OffsetField(offs, sigmoid(logits))


def _tanh_bound(t, bound):
    scaled = mul(t, 2.0 / bound)
    return mul(sub(mul(sigmoid(scaled), 2.0), 1.0), bound)  # bound * tanh(t / bound)


def deform_conv2d(x, field, params):
    """Modulated deformable 3x3 convolution, stride 1, padding 1.

    out(p) = sum_k sum_cin w[co, cin, k] * x[cin](p + tap_k + dp_k(p)) * m_k(p) + bias,
    with x read through bilinear_sample (zeros outside the image).
    """
    k = field.taps
    if k != NUM_TAPS:
        raise ValueError(f"expected {NUM_TAPS} taps, got {k}")
    b, ci, h, w = x.shape
    if field.offsets.shape[0] != b or field.offsets.shape[2:] != (h, w):
        raise ValueError(f"offset field {field.offsets.shape} does not match input {x.shape}")
    if not np.isfinite(field.offsets.data).all():
        raise ValueError("deform_conv2d: non-finite offsets")
    co = params.weight.shape[0]
    if params.weight.shape[1] != ci:
        raise ValueError(f"deform weight expects {params.weight.shape[1]} channels, input has {ci}")

    grid_y, grid_x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base = np.stack([grid_y, grid_x])[None].astype(x.dtype)  # (1, 2, H, W)

    pairs = split_channels(field.offsets, [2] * k)
    mods = split_channels(field.modulation, [1] * k)
    taps = []
    for i, (dy, dx) in enumerate(params.tap_grid):
        anchor = Tensor(base + np.asarray([dy, dx], dtype=x.dtype)[None, :, None, None])
        coords = add(pairs[i], anchor)
        sampled = bilinear_sample(x, coords)
        taps.append(mul(sampled, mods[i]))
    cols = concat_channels(*taps)  # (B, K*Ci, H, W), tap-major

    # weight (Co, Ci, 3, 3) -> (Co, K*Ci, 1, 1) with matching tap-major layout
    w_taps = reshape(transpose(params.weight, (0, 2, 3, 1)), (co, k * ci, 1, 1))
    return conv2d(cols, w_taps, params.bias, stride=1, padding=0)


class DdaBlock:
    """LDA -> offset prediction -> deformable conv, with ablation toggles.

    lda_mode: 'lda' | 'in' | 'bn' | 'none'; dga_enabled switches the
    deformable stage.  With everything off the block is the identity on
    the RGB features.
    """

    def __init__(self, name, channels, rng, dtype=np.float64, lda_mode="lda",
                 dga_enabled=True, slope=0.2, epsilon=1e-5, offset_bound=0.0):
        if lda_mode not in ("lda", "in", "bn", "none"):
            raise ValueError(f"unknown lda_mode '{lda_mode}'")
        self.lda_mode = lda_mode
        self.dga_enabled = dga_enabled
        self.slope = slope
        self.epsilon = epsilon
        self.offset_bound = offset_bound
        self.lda = None
        self.offset_w = None
        if lda_mode == "lda":
            self.lda = LdaParams.create(f"{name}.lda", channels, slope, rng, dtype, epsilon)
        if dga_enabled:
            k = NUM_TAPS
            # zero init: the block starts as a standard-geometry conv
            self.offset_w = Parameter(f"{name}.offset_conv.weight",
                                      np.zeros((3 * k, 2 * channels, 3, 3), dtype=dtype))
            self.offset_b = Parameter(f"{name}.offset_conv.bias",
                                      np.zeros(3 * k, dtype=dtype))
            self.deform = DeformConvParams.create(f"{name}.deform", channels, channels, rng, dtype)

    def parameters(self):
        ps = []
        if self.lda is not None:
            ps += self.lda.parameters()
        if self.dga_enabled:
            ps += [self.offset_w, self.offset_b] + self.deform.parameters()
        return ps

    def __call__(self, f_rgb, f_d, collect=None):
        if self.lda_mode == "lda":
            aligned = lda_forward(f_rgb, f_d, self.lda)
        elif self.lda_mode == "in":
            aligned = instance_norm_align(f_rgb, self.epsilon)
        elif self.lda_mode == "bn":
            aligned = batch_norm_align(f_rgb, self.epsilon)
        else:
            aligned = f_rgb
        if collect is not None:
            collect["rgb_lda"] = aligned
        if not self.dga_enabled:
            return aligned
        field = predict_offsets(f_d, aligned, self.offset_w, self.offset_b,
                                self.offset_bound)
        if collect is not None:
            collect["offset_field"] = field
        return deform_conv2d(aligned, field, self.deform)


def _check_aligned(a, b, who):
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError(f"{who}: expected rank-4 tensors, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[1] != b.shape[1] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"{who}: shape mismatch {a.shape} vs {b.shape}")
    if a.shape[2] * a.shape[3] == 0:
        raise ValueError(f"{who}: empty spatial extent")

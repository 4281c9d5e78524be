"""Full model: RGB/depth encoders, per-scale DDA -> MFA fusion, decoder
with skip merges, reconstruction head, and the global bicubic skip.

The network predicts a single-channel residual on top of the bicubically
upsampled low-resolution depth, so zeroing the head recovers plain bicubic
upsampling exactly.
"""

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Tensor, add, concat_channels, leaky_relu
from .dda import DdaBlock
from .mfa import Conv, MfaBlock
from .resample import bicubic_resize, bilinear_resize

CHECKPOINT_MAGIC = b"D2A2CKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture description; every ablation row is a toggle setting."""

    num_scales: int = 3
    base_channels: int = 32
    channel_growth: int = 2
    use_dda: bool = True
    use_mfa: bool = True
    lda_mode: str = "lda"          # lda | in | bn | none
    dga_enabled: bool = True
    gc_enabled: bool = True
    attention_mode: str = "pa"     # pa | ca | sa | none
    mfa_residual: bool = True
    activation_slope: float = 0.2
    offset_bound: float = 0.0      # 0 = unbounded offsets
    seed: int = 0

    def validate(self):
        if self.num_scales < 1:
            raise ValueError(f"num_scales must be >= 1, got {self.num_scales}")
        if self.base_channels < 1 or self.channel_growth < 1:
            raise ValueError("channel widths must be positive")
        if self.lda_mode not in ("lda", "in", "bn", "none"):
            raise ValueError(f"invalid lda_mode '{self.lda_mode}'")
        if self.attention_mode not in ("pa", "ca", "sa", "none"):
            raise ValueError(f"invalid attention_mode '{self.attention_mode}'")
        if self.offset_bound < 0:
            raise ValueError("offset_bound must be >= 0")
        return self

    def channels(self, scale_idx):
        return self.base_channels * self.channel_growth ** scale_idx

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got '{line}'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key '{key}'")
            kwargs[key] = _parse_field(cls, key, val)
        return cls(**kwargs).validate()


def _parse_field(cls, key, val):
    kind = cls.__dataclass_fields__[key].type
    if kind in (int, "int"):
        return int(val)
    if kind in (float, "float"):
        return float(val)
    if kind in (bool, "bool"):
        if val in ("True", "true", "1"):
            return True
        if val in ("False", "false", "0"):
            return False
        raise ValueError(f"bad boolean '{val}' for {key}")
    return val


class _Encoder:
    """Per-scale stacks of two conv+act layers; scales below the first
    downsample with a strided first conv."""

    def __init__(self, name, in_c, config, rng, dtype):
        self.slope = config.activation_slope
        self.stages = []
        for s in range(config.num_scales):
            c = config.channels(s)
            prev = in_c if s == 0 else config.channels(s - 1)
            first = Conv(f"{name}.s{s}.conv0", prev, c, 3, rng, dtype)
            second = Conv(f"{name}.s{s}.conv1", c, c, 3, rng, dtype)
            self.stages.append((first, second))

    def parameters(self):
        ps = []
        for first, second in self.stages:
            ps += first.parameters() + second.parameters()
        return ps

    def step(self, x, s):
        first, second = self.stages[s]
        stride = 1 if s == 0 else 2
        h = leaky_relu(first(x, stride=stride), self.slope)
        return leaky_relu(second(h), self.slope)


class D2A2Model:
    """Built by :func:`build_model`; holds parameters and the forward pass."""

    def __init__(self, config, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        self.rgb_encoder = _Encoder("rgb_enc", 3, config, rng, dtype)
        self.depth_encoder = _Encoder("depth_enc", 1, config, rng, dtype)
        self.dda_blocks = []
        self.mfa_blocks = []
        self.concat_convs = []
        for s in range(config.num_scales):
            c = config.channels(s)
            if config.use_dda:
                self.dda_blocks.append(DdaBlock(
                    f"dda.s{s}", c, rng, dtype, lda_mode=config.lda_mode,
                    dga_enabled=config.dga_enabled, slope=config.activation_slope,
                    offset_bound=config.offset_bound))
            if config.use_mfa:
                self.mfa_blocks.append(MfaBlock(
                    f"mfa.s{s}", c, rng, dtype, gc_enabled=config.gc_enabled,
                    attention_mode=config.attention_mode,
                    slope=config.activation_slope, residual=config.mfa_residual))
            else:
                self.concat_convs.append(Conv(f"fuse.s{s}.concat_conv", 2 * c, c, 3, rng, dtype))
        self.merge_convs = []
        for s in range(config.num_scales - 2, -1, -1):
            c = config.channels(s)
            up_c = config.channels(s + 1)
            self.merge_convs.append(Conv(f"dec.s{s}.merge", up_c + c, c, 3, rng, dtype))
        c0 = config.channels(0)
        self.head0 = Conv("head.conv0", c0, c0, 3, rng, dtype)
        self.head1 = Conv("head.conv1", c0, 1, 3, rng, dtype)
        self._params = self._collect()

    def _collect(self):
        ps = self.rgb_encoder.parameters() + self.depth_encoder.parameters()
        for blk in self.dda_blocks:
            ps += blk.parameters()
        for blk in self.mfa_blocks:
            ps += blk.parameters()
        for conv in self.concat_convs:
            ps += conv.parameters()
        for conv in self.merge_convs:
            ps += conv.parameters()
        ps += self.head0.parameters() + self.head1.parameters()
        names = [p.name for p in ps]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate parameter names: {sorted(dupes)}")
        return ps

    def parameters(self):
        return list(self._params)

    def param_dict(self):
        return {p.name: p for p in self._params}

    def num_parameters(self):
        return sum(p.data.size for p in self._params)

    def zero_grad(self):
        for p in self._params:
            p.zero_grad()

    def fuse(self, s, rgb_feat, depth_feat, collect=None):
        cfg = self.config
        aligned = rgb_feat
        if cfg.use_dda:
            sub = None if collect is None else collect.setdefault(f"s{s}", {})
            aligned = self.dda_blocks[s](rgb_feat, depth_feat, collect=sub)
        if cfg.use_mfa:
            sub = None if collect is None else collect.setdefault(f"s{s}", {})
            return aligned, self.mfa_blocks[s](aligned, depth_feat, collect=sub)
        slope = cfg.activation_slope
        return aligned, leaky_relu(self.concat_convs[s](concat_channels(aligned, depth_feat)), slope)

    def forward(self, rgb_hr, depth_lr, scale, collect=None):
        """rgb_hr (B, 3, H, W) + depth_lr (B, 1, H/s, W/s) -> (B, 1, H, W).

        Output = bicubic upsample of depth_lr + predicted residual.  The
        optional collect dict receives the per-scale diagnostic tensors
        (features around DDA, gate and attention maps) by reference.
        """
        cfg = self.config
        if rgb_hr.ndim != 4 or rgb_hr.shape[1] != 3:
            raise ValueError(f"rgb_hr must be (B, 3, H, W), got {rgb_hr.shape}")
        if depth_lr.ndim != 4 or depth_lr.shape[1] != 1:
            raise ValueError(f"depth_lr must be (B, 1, h, w), got {depth_lr.shape}")
        b, _, h, w = rgb_hr.shape
        if h % scale or w % scale:
            raise ValueError(f"spatial dims {h}x{w} not divisible by scale {scale}")
        step = 2 ** (cfg.num_scales - 1)
        if h % step or w % step:
            raise ValueError(f"spatial dims {h}x{w} not divisible by 2^{cfg.num_scales - 1}")
        if depth_lr.shape[2] * scale != h or depth_lr.shape[3] * scale != w:
            raise ValueError(f"depth_lr {depth_lr.shape} does not match rgb {rgb_hr.shape} at x{scale}")

        depth_up = bicubic_resize(depth_lr, scale)
        if collect is not None:
            collect["depth_up"] = depth_up

        r = rgb_hr
        d = depth_up
        fused_per_scale = []
        for s in range(cfg.num_scales):
            r = self.rgb_encoder.step(r, s)
            d = self.depth_encoder.step(d, s)
            if collect is not None:
                collect.setdefault(f"s{s}", {})["rgb_before"] = r
                collect[f"s{s}"]["depth_feat"] = d
            aligned, fused = self.fuse(s, r, d, collect)
            if collect is not None:
                collect[f"s{s}"]["rgb_after"] = aligned
            fused_per_scale.append(fused)
            d = fused

        u = fused_per_scale[-1]
        for i, s in enumerate(range(cfg.num_scales - 2, -1, -1)):
            up = bilinear_resize(u, 2)
            u = leaky_relu(self.merge_convs[i](concat_channels(up, fused_per_scale[s])),
                           cfg.activation_slope)
        residual = self.head1(leaky_relu(self.head0(u), cfg.activation_slope))
        return add(depth_up, residual)


def build_model(config, rng_seed=None, dtype=np.float32):
    """Deterministic build: same seed, same bits, stable parameter names."""
    cfg = ModelConfig(**{f.name: getattr(config, f.name) for f in fields(ModelConfig)})
    if rng_seed is not None:
        cfg.seed = rng_seed
    return D2A2Model(cfg, dtype=dtype)


# ---------------------------------------------------------------------------
# checkpoint io: magic, version byte, config text, then a name table of
# (name, shape, little-endian float32 data) entries.


def save_checkpoint(model, path):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    cfg_text = model.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_text)))
    buf.write(cfg_text)
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<B", p.data.ndim))
        for dim in p.data.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Rebuild the model from the embedded config and restore parameters."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)

    def take(n, what):
        chunk = buf.read(n)
        if len(chunk) != n:
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        return chunk

    if take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: bad magic in {path}")
    version = struct.unpack("<B", take(1, "version"))[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} "
                              f"(expected {CHECKPOINT_VERSION})")
    cfg_len = struct.unpack("<I", take(4, "config length"))[0]
    try:
        config = ModelConfig.from_text(take(cfg_len, "config").decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"invalid embedded config: {e}") from e
    n_params = struct.unpack("<I", take(4, "parameter count"))[0]

    model = build_model(config, dtype=np.float32)
    by_name = model.param_dict()
    seen = set()
    for _ in range(n_params):
        name_len = struct.unpack("<H", take(2, "parameter name length"))[0]
        name = take(name_len, "parameter name").decode("utf-8")
        ndim = struct.unpack("<B", take(1, f"rank of '{name}'"))[0]
        shape = tuple(struct.unpack("<I", take(4, f"shape of '{name}'"))[0]
                      for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * count, f"data of parameter '{name}'"), dtype="<f4")
        if name not in by_name:
            raise CheckpointError(f"checkpoint parameter '{name}' does not exist "
                                  f"in a model built from the embedded config")
        p = by_name[name]
        if p.data.shape != shape:
            raise CheckpointError(f"parameter '{name}' has shape {shape} in the "
                                  f"checkpoint but {p.data.shape} in the model")
        p.data = data.reshape(shape).astype(np.float32)
        seen.add(name)
    missing = sorted(set(by_name) - seen)
    if missing:
        raise CheckpointError(f"checkpoint is missing parameter '{missing[0]}' "
                              f"({len(missing)} missing in total)")
    return model

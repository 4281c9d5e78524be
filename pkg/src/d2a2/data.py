"""Image IO, degradation, augmentation, normalization, and the synthetic
RGB/depth scene generator.

Formats are binary PGM (P5, 8/16-bit) for depth and grayscale maps and
binary PPM (P6, 8-bit) for RGB: bit-exact and dependency-free.  PGM values
are returned as raw integer levels (native depth units); PPM values are
scaled to [0, 1].  Datasets on disk are a manifest text file with one
tab-separated line per pair: depth_path, rgb_path, units, depth_min,
depth_max.
"""

import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff import Tensor
from .resample import resize2d

UNITS = ("centimeters", "meters", "disparity", "synthetic")


class ImageFormatError(ValueError):
    """Malformed PGM/PPM data; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# PGM / PPM


def _read_header(data, path):
    """Parse magic, dims, maxval; returns (magic, w, h, maxval, data_offset)."""
    if len(data) < 2:
        raise ImageFormatError(f"{path}: file too short for a magic number", 0)
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: bad magic number {magic!r}", 0)
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise ImageFormatError(f"{path}: header ended early", pos)
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise ImageFormatError(f"{path}: non-numeric header token {tok!r}", start)
            tokens.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after maxval", pos)
    pos += 1
    w, h, maxval = tokens
    if not (0 < maxval < 65536):
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}", pos)
    return magic, w, h, maxval, pos


def read_pgm(path):
    """Binary PGM -> (array (H, W) float64 of raw levels, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h, maxval, pos = _read_header(data, path)
    if magic != b"P5":
        raise ImageFormatError(f"{path}: expected PGM (P5), got {magic!r}", 0)
    two_byte = maxval > 255
    need = w * h * (2 if two_byte else 1)
    if len(data) - pos < need:
        raise ImageFormatError(f"{path}: pixel data truncated ({len(data) - pos} of {need} bytes)", pos)
    dt = ">u2" if two_byte else "u1"
    img = np.frombuffer(data, dtype=dt, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.float64), maxval


def write_pgm(values, path, maxval=65535):
    """Round values to integer levels in [0, maxval] and write binary PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"write_pgm expects (H, W), got {arr.shape}")
    levels = np.clip(np.rint(arr), 0, maxval)
    dt = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode())
        fh.write(levels.astype(dt).tobytes())


def read_ppm(path):
    """Binary 8-bit PPM -> array (3, H, W) float64 in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h, maxval, pos = _read_header(data, path)
    if magic != b"P6":
        raise ImageFormatError(f"{path}: expected PPM (P6), got {magic!r}", 0)
    if maxval > 255:
        raise ImageFormatError(f"{path}: 16-bit PPM not supported (maxval {maxval})", pos)
    need = w * h * 3
    if len(data) - pos < need:
        raise ImageFormatError(f"{path}: pixel data truncated ({len(data) - pos} of {need} bytes)", pos)
    img = np.frombuffer(data, dtype="u1", count=need, offset=pos).reshape(h, w, 3)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float64) / maxval


def write_ppm(values, path):
    """Values (3, H, W) in [0, 1] -> binary 8-bit PPM."""
    arr = np.asarray(values)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"write_ppm expects (3, H, W), got {arr.shape}")
    levels = np.clip(np.rint(arr * 255.0), 0, 255).astype("u1")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[2]} {arr.shape[1]}\n255\n".encode())
        fh.write(levels.transpose(1, 2, 0).tobytes())


def read_image(path, dtype=np.float64):
    """PGM -> Tensor (1, 1, H, W) of raw levels; PPM -> (1, 3, H, W) in [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        img, _ = read_pgm(path)
        return Tensor(img[None, None].astype(dtype))
    if magic == b"P6":
        return Tensor(read_ppm(path)[None].astype(dtype))
    raise ImageFormatError(f"{path}: bad magic number {magic!r}", 0)


def write_image(tensor, path, maxval=65535):
    """Single-channel tensors go to PGM (raw levels); 3-channel to PPM."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    arr = arr.reshape(arr.shape[-3:]) if arr.ndim == 4 else arr
    if arr.ndim == 3 and arr.shape[0] == 1:
        write_pgm(arr[0], path, maxval)
    elif arr.ndim == 2:
        write_pgm(arr, path, maxval)
    elif arr.ndim == 3 and arr.shape[0] == 3:
        write_ppm(arr, path)
    else:
        raise ValueError(f"cannot infer image format for shape {arr.shape}")


# ---------------------------------------------------------------------------
# samples and normalization


@dataclass
class NormalizationRecord:
    """Per-sample depth range used for [0, 1] scaling; exact inverse pair."""

    depth_min: float
    depth_max: float

    def normalize(self, d):
        return (d - self.depth_min) / (self.depth_max - self.depth_min)

    def denormalize(self, n):
        return n * (self.depth_max - self.depth_min) + self.depth_min


@dataclass
class SamplePair:
    """One training/eval item; depth in native units, rgb in [0, 1]."""

    depth_hr: Tensor   # (1, 1, H, W)
    rgb_hr: Tensor     # (1, 3, H, W)
    depth_lr: Tensor   # (1, 1, H/s, W/s)
    scale: int
    units: str
    depth_min: float
    depth_max: float
    name: str = ""

    def record(self):
        return NormalizationRecord(self.depth_min, self.depth_max)

    @property
    def size(self):
        return self.depth_hr.shape[2], self.depth_hr.shape[3]


def degrade(depth_hr, scale):
    """Fixed bicubic downsampling by 1/scale (never recorded on a tape)."""
    t = depth_hr if isinstance(depth_hr, Tensor) else Tensor(depth_hr)
    return resize2d(t.detach(), Fraction(1, scale), "cubic")


def make_pair(depth_hr, rgb_hr, scale, units, depth_min, depth_max, name=""):
    return SamplePair(depth_hr, rgb_hr, degrade(depth_hr, scale), scale,
                      units, depth_min, depth_max, name)


def _apply_dihedral(arr, hflip, vflip, k):
    if hflip:
        arr = arr[:, :, :, ::-1]
    if vflip:
        arr = arr[:, :, ::-1, :]
    if k:
        arr = np.rot90(arr, k, axes=(2, 3))
    return np.ascontiguousarray(arr)


def augment(pair, rng, rotate=True):
    """One joint dihedral draw (h/v flips p=0.5, k*90 degree rotation)."""
    h, w = pair.size
    if rotate and h != w:
        raise ValueError(f"rotation augmentation needs square crops, got {h}x{w}")
    hflip = bool(rng.integers(0, 2))
    vflip = bool(rng.integers(0, 2))
    k = int(rng.integers(0, 4)) if rotate else 0
    return SamplePair(
        Tensor(_apply_dihedral(pair.depth_hr.data, hflip, vflip, k)),
        Tensor(_apply_dihedral(pair.rgb_hr.data, hflip, vflip, k)),
        Tensor(_apply_dihedral(pair.depth_lr.data, hflip, vflip, k)),
        pair.scale, pair.units, pair.depth_min, pair.depth_max, pair.name)


def random_crop(pair, size, rng):
    """Aligned random crop: HR origin on the scale grid so the LR crop is
    the corresponding window of the degraded map."""
    h, w = pair.size
    s = pair.scale
    if size % s:
        raise ValueError(f"crop size {size} not divisible by scale {s}")
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    oy = int(rng.integers(0, (h - size) // s + 1)) * s
    ox = int(rng.integers(0, (w - size) // s + 1)) * s
    ls, loy, lox = size // s, oy // s, ox // s
    return SamplePair(
        Tensor(pair.depth_hr.data[:, :, oy:oy + size, ox:ox + size].copy()),
        Tensor(pair.rgb_hr.data[:, :, oy:oy + size, ox:ox + size].copy()),
        Tensor(pair.depth_lr.data[:, :, loy:loy + ls, lox:lox + ls].copy()),
        pair.scale, pair.units, pair.depth_min, pair.depth_max, pair.name)


# ---------------------------------------------------------------------------
# synthetic scenes

SYNTH_DEPTH_MIN = 200.0
SYNTH_DEPTH_MAX = 1000.0


def synth_scene(seed, size, scale, return_labels=False):
    """Piecewise-smooth depth plus an RGB image with the same region
    geometry but depth-irrelevant texture (stripes/checker inside regions).

    Regions are rectangles and ellipses at distinct depth levels over a
    gently sloped background; each region also carries its own distinct
    base color, so depth edges and RGB edges coincide by construction.
    """
    if size < 32:
        raise ValueError(f"scene size must be >= 32, got {size}")
    if size % scale or size % 4:
        raise ValueError(f"scene size {size} must be divisible by scale {scale} and by 4")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    yn, xn = yy / size, xx / size

    lo, hi = SYNTH_DEPTH_MIN, SYNTH_DEPTH_MAX
    n_regions = int(rng.integers(4, 8))
    # distinct levels: shuffled even spacing with a small jitter
    levels = np.linspace(lo + 60, hi - 60, n_regions + 1)
    levels = rng.permutation(levels) + rng.uniform(-15, 15, n_regions + 1)

    depth = levels[0] + rng.uniform(-80, 80) * yn + rng.uniform(-80, 80) * xn
    region = np.zeros((size, size), dtype=np.int32)
    for i in range(1, n_regions + 1):
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        ry, rx = rng.uniform(0.08, 0.30, 2) * size
        if rng.integers(0, 2):
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        grad = rng.uniform(-30, 30) * yn + rng.uniform(-30, 30) * xn
        depth = np.where(mask, levels[i] + grad, depth)
        region = np.where(mask, i, region)
    depth = np.clip(depth, lo, hi)

    rgb = np.zeros((3, size, size))
    base_colors = rng.uniform(0.15, 0.85, (n_regions + 1, 3))
    # keep colors pairwise separated so region boundaries always show in RGB
    for i in range(1, n_regions + 1):
        while np.abs(base_colors[i] - base_colors[:i]).sum(axis=1).min() < 0.3:
            base_colors[i] = rng.uniform(0.15, 0.85, 3)
    for i in range(n_regions + 1):
        mask = region == i
        amp = rng.uniform(0.08, 0.2)
        period = rng.uniform(4, 12)
        phase = rng.uniform(0, 2 * np.pi)
        if rng.integers(0, 2):
            angle = rng.uniform(0, np.pi)
            wave = np.sin(2 * np.pi * (np.cos(angle) * xx + np.sin(angle) * yy) / period + phase)
            tex = amp * np.sign(wave)
        else:
            tex = amp * (((yy // int(period)) + (xx // int(period))) % 2 * 2.0 - 1.0)
        direction = rng.uniform(-1, 1, 3)
        for ch in range(3):
            rgb[ch][mask] = base_colors[i, ch] + tex[mask] * direction[ch]
    rgb = np.clip(rgb, 0.0, 1.0)

    pair = make_pair(Tensor(depth[None, None]), Tensor(rgb[None]), scale,
                     "synthetic", lo, hi, name=f"synth{seed}")
    if return_labels:
        return pair, {"region": region, "levels": levels}
    return pair


def synth_dataset(base_seed, count, size, scale):
    """Per-sample streams derived from (base_seed, index)."""
    return [synth_scene((base_seed, i), size, scale) for i in range(count)]


# ---------------------------------------------------------------------------
# manifests


def load_manifest(path, scale):
    """Tab-separated lines: depth_path, rgb_path, units, depth_min, depth_max."""
    root = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
            depth_path, rgb_path, units, dmin, dmax = parts
            if units not in UNITS:
                raise ValueError(f"{path}:{lineno}: unknown units '{units}'")
            depth, _ = read_pgm(os.path.join(root, depth_path))
            rgb = read_ppm(os.path.join(root, rgb_path))
            pairs.append(make_pair(Tensor(depth[None, None]), Tensor(rgb[None]),
                                   scale, units, float(dmin), float(dmax),
                                   name=os.path.basename(depth_path)))
    if not pairs:
        raise ValueError(f"{path}: manifest lists no pairs")
    return pairs


def export_pairs(pairs, out_dir, maxval=65535):
    """Write pairs as PGM/PPM plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, pair in enumerate(pairs):
        dname, rname = f"pair{i:03d}_depth.pgm", f"pair{i:03d}_rgb.ppm"
        write_pgm(pair.depth_hr.data[0, 0], os.path.join(out_dir, dname), maxval)
        write_ppm(pair.rgb_hr.data[0], os.path.join(out_dir, rname))
        lines.append(f"{dname}\t{rname}\t{pair.units}\t{pair.depth_min}\t{pair.depth_max}")
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_dataset(spec, scale, seed=0, synth_size=96):
    """'synthetic:N' or a manifest path -> list of SamplePairs."""
    if spec.startswith("synthetic:"):
        count = int(spec.split(":", 1)[1])
        if count < 1:
            raise ValueError(f"need at least one synthetic pair, got {count}")
        return synth_dataset(seed, count, synth_size, scale)
    return load_manifest(spec, scale)

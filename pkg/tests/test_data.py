"""PGM/PPM IO, degradation, augmentation, crops, synthetic scenes, manifests."""

import numpy as np
import pytest

from d2a2.autodiff import Tensor
from d2a2.data import (ImageFormatError, NormalizationRecord, SamplePair,
                       augment, degrade, export_pairs, load_manifest, make_pair,
                       random_crop, read_image, read_pgm, read_ppm, synth_scene,
                       synth_dataset, write_pgm, write_ppm)

from oracles import bicubic_direct


def test_pgm_16bit_roundtrip_lossless(tmp_path):
    rng = np.random.default_rng(0)
    levels = rng.integers(0, 65536, (12, 17)).astype(np.float64)
    path = tmp_path / "d.pgm"
    write_pgm(levels, path, maxval=65535)
    back, maxval = read_pgm(path)
    assert maxval == 65535
    np.testing.assert_array_equal(back, levels)


def test_pgm_8bit_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    levels = rng.integers(0, 256, (5, 9)).astype(np.float64)
    path = tmp_path / "d8.pgm"
    write_pgm(levels, path, maxval=255)
    back, maxval = read_pgm(path)
    assert maxval == 255
    np.testing.assert_array_equal(back, levels)


def test_ppm_scaling_and_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    levels = rng.integers(0, 256, (3, 6, 8))
    path = tmp_path / "c.ppm"
    write_ppm(levels / 255.0, path)
    back = read_ppm(path)
    assert back.min() >= 0.0 and back.max() <= 1.0
    np.testing.assert_allclose(back * 255.0, levels, atol=1e-9)


def test_malformed_magic_names_offset(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P9\n4 4\n255\n" + b"\x00" * 16)
    with pytest.raises(ImageFormatError, match="byte offset 0"):
        read_pgm(path)


def test_truncated_pixels_rejected(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 7)
    with pytest.raises(ImageFormatError, match="truncated"):
        read_pgm(path)


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04")
    img, maxval = read_pgm(path)
    np.testing.assert_array_equal(img, [[1, 2], [3, 4]])


def test_read_image_dispatch(tmp_path):
    write_pgm(np.ones((4, 4)), tmp_path / "d.pgm", 255)
    write_ppm(np.zeros((3, 4, 4)), tmp_path / "c.ppm")
    assert read_image(tmp_path / "d.pgm").shape == (1, 1, 4, 4)
    assert read_image(tmp_path / "c.ppm").shape == (1, 3, 4, 4)


def test_normalization_exact_inverse():
    rng = np.random.default_rng(3)
    rec = NormalizationRecord(200.0, 1000.0)
    d = rng.uniform(200, 1000, (1, 1, 8, 8))
    back = rec.denormalize(rec.normalize(d))
    np.testing.assert_allclose(back, d, rtol=1e-6)


def test_degrade_constant_and_against_oracle():
    const = degrade(Tensor(np.full((1, 1, 16, 16), 3.3)), 4)
    np.testing.assert_allclose(const.data, 3.3, atol=1e-12)
    # step edge
    img = np.zeros((8, 8))
    img[:, 4:] = 10.0
    lib = degrade(Tensor(img[None, None]), 4).data[0, 0]
    ref = bicubic_direct(img, 0.25)
    np.testing.assert_allclose(lib, ref, atol=1e-6)


def _toy_pair(scale=2, size=8):
    rng = np.random.default_rng(7)
    depth = rng.uniform(100, 900, (1, 1, size, size))
    rgb = rng.uniform(0, 1, (1, 3, size, size))
    return make_pair(Tensor(depth), Tensor(rgb), scale, "synthetic", 100.0, 900.0)


def test_pair_lr_is_regenerable():
    pair = _toy_pair()
    again = degrade(pair.depth_hr, pair.scale)
    np.testing.assert_array_equal(pair.depth_lr.data, again.data)


def test_augment_identity_and_involution():
    pair = _toy_pair()

    class FixedRng:
        def __init__(self, vals):
            self.vals = list(vals)

        def integers(self, lo, hi):
            return self.vals.pop(0)

    ident = augment(pair, FixedRng([0, 0, 0]))
    np.testing.assert_array_equal(ident.depth_hr.data, pair.depth_hr.data)
    once = augment(pair, FixedRng([1, 0, 0]))
    twice = augment(once, FixedRng([1, 0, 0]))
    np.testing.assert_array_equal(twice.depth_hr.data, pair.depth_hr.data)
    np.testing.assert_array_equal(twice.rgb_hr.data, pair.rgb_hr.data)


def test_augment_joint_and_deterministic():
    pair = _toy_pair()
    a = augment(pair, np.random.default_rng(5))
    b = augment(pair, np.random.default_rng(5))
    np.testing.assert_array_equal(a.depth_hr.data, b.depth_hr.data)
    np.testing.assert_array_equal(a.rgb_hr.data, b.rgb_hr.data)
    np.testing.assert_array_equal(a.depth_lr.data, b.depth_lr.data)
    # joint: the LR map is the transformed LR map of the original
    regen = degrade(a.depth_hr, a.scale)
    np.testing.assert_allclose(a.depth_lr.data, regen.data, atol=1e-9)


def test_augment_rotation_needs_square():
    rng = np.random.default_rng(6)
    depth = Tensor(rng.uniform(0, 1, (1, 1, 4, 8)))
    rgb = Tensor(rng.uniform(0, 1, (1, 3, 4, 8)))
    pair = make_pair(depth, rgb, 2, "synthetic", 0.0, 1.0)
    with pytest.raises(ValueError, match="square"):
        augment(pair, rng, rotate=True)


def test_dihedral_group_closure():
    # applying two draws equals the single composed array transform
    pair = _toy_pair()
    r1, r2 = np.random.default_rng(8), np.random.default_rng(9)
    once = augment(pair, r1)
    twice = augment(once, r2)
    direct = pair.depth_hr.data
    for rng in (np.random.default_rng(8), np.random.default_rng(9)):
        h, v, k = bool(rng.integers(0, 2)), bool(rng.integers(0, 2)), int(rng.integers(0, 4))
        if h:
            direct = direct[:, :, :, ::-1]
        if v:
            direct = direct[:, :, ::-1, :]
        direct = np.rot90(direct, k, axes=(2, 3))
    np.testing.assert_array_equal(twice.depth_hr.data, direct)


def test_random_crop_full_size_identity():
    pair = _toy_pair(scale=2, size=8)
    crop = random_crop(pair, 8, np.random.default_rng(0))
    np.testing.assert_array_equal(crop.depth_hr.data, pair.depth_hr.data)
    np.testing.assert_array_equal(crop.depth_lr.data, pair.depth_lr.data)


def test_random_crop_alignment_contract_interior():
    # the cropped LR equals degrade(cropped HR) away from the crop border,
    # where the downsampling stencil never leaves the crop
    rng = np.random.default_rng(10)
    scale = 4
    depth = Tensor(rng.uniform(100, 900, (1, 1, 32, 32)))
    rgb = Tensor(rng.uniform(0, 1, (1, 3, 32, 32)))
    pair = make_pair(depth, rgb, scale, "synthetic", 100.0, 900.0)
    for trial in range(5):
        crop = random_crop(pair, 16, rng)
        regen = degrade(crop.depth_hr, scale)
        m = 2  # stencil reach in LR pixels
        np.testing.assert_allclose(crop.depth_lr.data[:, :, m:-m, m:-m],
                                   regen.data[:, :, m:-m, m:-m], atol=1e-6)


def test_random_crop_errors():
    pair = _toy_pair(scale=2, size=8)
    with pytest.raises(ValueError, match="divisible"):
        random_crop(pair, 5, np.random.default_rng(0))
    with pytest.raises(ValueError, match="larger"):
        random_crop(pair, 16, np.random.default_rng(0))


def test_random_crop_deterministic():
    pair = _toy_pair(scale=2, size=8)
    a = random_crop(pair, 4, np.random.default_rng(3))
    b = random_crop(pair, 4, np.random.default_rng(3))
    np.testing.assert_array_equal(a.depth_hr.data, b.depth_hr.data)


def test_synth_scene_deterministic():
    a = synth_scene(3, 64, 4)
    b = synth_scene(3, 64, 4)
    assert np.array_equal(a.depth_hr.data, b.depth_hr.data)
    assert np.array_equal(a.rgb_hr.data, b.rgb_hr.data)
    assert np.array_equal(a.depth_lr.data, b.depth_lr.data)
    c = synth_scene(4, 64, 4)
    assert not np.array_equal(a.depth_hr.data, c.depth_hr.data)


def test_synth_scene_depth_range_and_shapes():
    pair = synth_scene(0, 64, 4)
    assert pair.depth_hr.shape == (1, 1, 64, 64)
    assert pair.rgb_hr.shape == (1, 3, 64, 64)
    assert pair.depth_lr.shape == (1, 1, 16, 16)
    assert pair.depth_hr.data.min() >= pair.depth_min
    assert pair.depth_hr.data.max() <= pair.depth_max
    assert pair.rgb_hr.data.min() >= 0.0 and pair.rgb_hr.data.max() <= 1.0


def test_synth_scene_edges_coincide():
    # depth boundaries and rgb boundaries derive from the same region map
    for seed in range(5):
        pair, labels = synth_scene(seed, 64, 4, return_labels=True)
        region = labels["region"]
        depth = pair.depth_hr.data[0, 0]
        rgb = pair.rgb_hr.data[0]
        h_edge = region[:, 1:] != region[:, :-1]
        v_edge = region[1:, :] != region[:-1, :]
        depth_h = h_edge & (np.abs(depth[:, 1:] - depth[:, :-1]) > 5)
        rgb_h = h_edge & (np.abs(rgb[:, :, 1:] - rgb[:, :, :-1]).sum(axis=0) > 0.02)
        depth_v = v_edge & (np.abs(depth[1:, :] - depth[:-1, :]) > 5)
        rgb_v = v_edge & (np.abs(rgb[:, 1:, :] - rgb[:, :-1, :]).sum(axis=0) > 0.02)
        inter = (depth_h & rgb_h).sum() + (depth_v & rgb_v).sum()
        union = (depth_h | rgb_h).sum() + (depth_v | rgb_v).sum()
        assert union > 0
        assert inter / union > 0.9, f"seed {seed}: IoU {inter / union:.3f}"


def test_synth_scene_validation():
    with pytest.raises(ValueError, match=">= 32"):
        synth_scene(0, 16, 4)
    with pytest.raises(ValueError, match="divisible"):
        synth_scene(0, 36, 8)


def test_manifest_roundtrip(tmp_path):
    pairs = synth_dataset(0, 3, 32, 4)
    manifest = export_pairs(pairs, tmp_path / "data")
    loaded = load_manifest(manifest, 4)
    assert len(loaded) == 3
    assert loaded[0].units == "synthetic"
    # depth stored as rounded 16-bit levels
    np.testing.assert_allclose(loaded[0].depth_hr.data,
                               np.rint(pairs[0].depth_hr.data), atol=0.5)
    # LR regenerated from the stored HR map
    regen = degrade(loaded[0].depth_hr, 4)
    np.testing.assert_array_equal(loaded[0].depth_lr.data, regen.data)


def test_manifest_bad_lines(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.pgm\tb.ppm\tsynthetic\n")
    with pytest.raises(ValueError, match="5 tab-separated"):
        load_manifest(p, 4)
    p.write_text("a.pgm\tb.ppm\tfurlongs\t0\t1\n")
    with pytest.raises(ValueError, match="unknown units"):
        load_manifest(p, 4)

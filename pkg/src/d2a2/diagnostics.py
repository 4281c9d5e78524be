"""Diagnostic exports: per-scale feature maps around the alignment module,
gate and attention maps, and the feature histogram around domain alignment
with its Wasserstein-1 distances to the depth features."""

import csv
import os

import numpy as np

from .autodiff import Tensor
from .data import write_pgm


def _channel_mean_map(t):
    return t.data.mean(axis=(0, 1))


def _to_gray(img, lo=None, hi=None):
    """Map values to 8-bit levels; (0,1)-ranged maps use the fixed linear
    mapping, features are min-max normalized."""
    if lo is None:
        lo, hi = float(img.min()), float(img.max())
        if hi - lo < 1e-12:
            hi = lo + 1.0
    return np.clip((img - lo) / (hi - lo) * 255.0, 0, 255)


def histogram_w1(before, after, depth, bins=64):
    """Shared-bin histograms of the three feature populations plus the
    Wasserstein-1 distances W1(before, depth) and W1(after, depth)."""
    lo = min(before.min(), after.min(), depth.min())
    hi = max(before.max(), after.max(), depth.max())
    if hi - lo < 1e-12:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    hists = {}
    for key, vals in (("before", before), ("after", after), ("depth", depth)):
        counts, _ = np.histogram(vals, bins=edges)
        hists[key] = counts / counts.sum()

    def w1(a, b):
        return float(np.abs(np.cumsum(a - b)).sum() * width)

    return (centers, hists,
            w1(hists["before"], hists["depth"]),
            w1(hists["after"], hists["depth"]))


def diagnose(model, pair, out_dir, bins=64):
    """Run one sample through the model collecting the fusion tensors, and
    write the PGM maps + histogram CSV.  Returns the export manifest with
    the two Wasserstein-1 distances."""
    os.makedirs(out_dir, exist_ok=True)
    rec = pair.record()
    rgb = Tensor(pair.rgb_hr.data.astype(model.dtype))
    lr_depth = Tensor(rec.normalize(pair.depth_lr.data).astype(model.dtype))
    collect = {}
    out = model.forward(rgb, lr_depth, pair.scale, collect=collect)

    written = []
    for s in range(model.config.num_scales):
        maps = collect.get(f"s{s}", {})
        for key, fixed_range in (("rgb_before", None), ("rgb_after", None),
                                 ("gate", (0.0, 1.0)), ("attention", (0.0, 1.0))):
            if key not in maps:
                continue
            t = maps[key]
            img = np.broadcast_to(t.data, (t.shape[0], t.shape[1]) + maps["rgb_before"].shape[2:])
            img = img.mean(axis=(0, 1))
            lo, hi = fixed_range if fixed_range else (None, None)
            path = os.path.join(out_dir, f"s{s}_{key}.pgm")
            write_pgm(_to_gray(img, lo, hi), path, maxval=255)
            written.append(path)

    s0 = collect["s0"]
    before = s0["rgb_before"].data.ravel()
    after = s0.get("rgb_lda", s0["rgb_before"]).data.ravel()
    depth = s0["depth_feat"].data.ravel()
    centers, hists, w1_before, w1_after = histogram_w1(before, after, depth, bins)

    hist_path = os.path.join(out_dir, "lda_histogram.csv")
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "rgb_before", "rgb_after", "depth"])
        for i in range(len(centers)):
            w.writerow([f"{centers[i]:.9g}", f"{hists['before'][i]:.9g}",
                        f"{hists['after'][i]:.9g}", f"{hists['depth'][i]:.9g}"])
    summary_path = os.path.join(out_dir, "lda_w1.csv")
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["w1_before_vs_depth", f"{w1_before:.9g}"])
        w.writerow(["w1_after_vs_depth", f"{w1_after:.9g}"])

    return {
        "images": written,
        "histogram": hist_path,
        "summary": summary_path,
        "w1_before": w1_before,
        "w1_after": w1_after,
        "output": out,
    }

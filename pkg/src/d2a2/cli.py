"""Command-line surface: train, eval, infer, gradcheck, diagnose, ablate."""

import argparse
import os
import sys

import numpy as np

from . import ablations, gradcheck
from .autodiff import Tensor
from .backend import backend_name
from .data import (NormalizationRecord, load_dataset, make_pair, read_image,
                   write_pgm)
from .model import ModelConfig, build_model, load_checkpoint
from .train import TrainConfig, evaluate, parse_config_file, train


def _worker_cap():
    """D2A2_THREADS caps the worker count; this implementation always runs
    one worker (deterministic), so any cap >= 1 is honored."""
    raw = os.environ.get("D2A2_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise SystemExit(f"D2A2_THREADS must be an integer, got '{raw}'")
    if cap < 1:
        raise SystemExit(f"D2A2_THREADS must be >= 1, got {cap}")
    return cap


def _load_pair(rgb_path, depth_path, scale):
    rgb = read_image(rgb_path)
    depth_lr = read_image(depth_path)
    if rgb.shape[1] != 3:
        raise SystemExit(f"{rgb_path}: expected a 3-channel PPM")
    if depth_lr.shape[1] != 1:
        raise SystemExit(f"{depth_path}: expected a single-channel PGM")
    return rgb, depth_lr


def cmd_train(args):
    _worker_cap()
    if args.config:
        model_cfg, train_cfg = parse_config_file(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if args.seed is not None:
        model_cfg.seed = args.seed
        train_cfg.seed = args.seed
    if args.steps is not None:
        train_cfg.steps = args.steps
    if args.crop is not None:
        train_cfg.crop = args.crop
    pairs = load_dataset(args.data, args.scale, seed=train_cfg.seed)
    model = build_model(model_cfg, dtype=np.float32)
    print(f"training on {len(pairs)} pairs at x{args.scale} "
          f"({model.num_parameters()} parameters, backend {backend_name()})")
    res = train(model, pairs, train_cfg, args.out, scale=args.scale)
    if res.halted:
        print(f"halted: {res.halt_reason}; last checkpoint: {res.checkpoint}")
        return 1
    print(f"final loss (window-50 mean): {res.final_loss:.6f}")
    if res.report:
        print(f"train-set rmse: {res.report.mean_rmse:.4f} ({res.report.scale}x)")
    print(f"checkpoint: {res.checkpoint}")
    return 0


def cmd_eval(args):
    _worker_cap()
    model = load_checkpoint(args.checkpoint)
    pairs = load_dataset(args.data, args.scale, seed=0)
    report = evaluate(model, pairs, args.scale)
    report.model_id = os.path.basename(args.checkpoint)
    report.to_csv(args.report)
    print(f"mean rmse over {len(report.per_sample)} samples: {report.mean_rmse:.4f}")
    print(f"report written to {args.report}")
    return 0


def cmd_infer(args):
    model = load_checkpoint(args.checkpoint)
    rgb, depth_lr = _load_pair(args.rgb, args.depth_lr, args.scale)
    # per-sample normalization from the LR map's own range
    dmin, dmax = float(depth_lr.data.min()), float(depth_lr.data.max())
    if dmax - dmin < 1e-9:
        dmax = dmin + 1.0
    rec = NormalizationRecord(dmin, dmax)
    out = model.forward(Tensor(rgb.data.astype(model.dtype)),
                        Tensor(rec.normalize(depth_lr.data).astype(model.dtype)),
                        args.scale)
    restored = rec.denormalize(out.data[0, 0].astype(np.float64))
    write_pgm(restored, args.out, maxval=65535)
    print(f"wrote {args.out} ({restored.shape[0]}x{restored.shape[1]}, "
          f"range {restored.min():.1f}..{restored.max():.1f})")
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run(args.op)
    failed = 0
    for name, err, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<18} max rel err {err:.3e}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed "
          f"(tolerance {gradcheck.TOLERANCE:g})")
    return 1 if failed else 0


def cmd_diagnose(args):
    from .diagnostics import diagnose
    model = load_checkpoint(args.checkpoint)
    rgb, depth_lr = _load_pair(args.rgb, args.depth_lr, args.scale)
    dmin, dmax = float(depth_lr.data.min()), float(depth_lr.data.max())
    if dmax - dmin < 1e-9:
        dmax = dmin + 1.0
    depth_hr = Tensor(np.zeros((1, 1, rgb.shape[2], rgb.shape[3])))  # unused by diagnose
    pair = make_pair(depth_hr, rgb, args.scale, "synthetic", dmin, dmax)
    pair.depth_lr.data = depth_lr.data
    result = diagnose(model, pair, args.out)
    print(f"wrote {len(result['images'])} maps + histogram to {args.out}")
    print(f"W1(before LDA, depth) = {result['w1_before']:.6f}")
    print(f"W1(after LDA, depth)  = {result['w1_after']:.6f}")
    return 0


def cmd_ablate(args):
    _worker_cap()
    pairs = load_dataset(f"synthetic:{args.pairs}", args.scale, seed=args.seed)
    results = ablations.run_table(args.table, pairs, args.out, args.scale,
                                  steps=args.steps, log=print)
    print(f"comparative CSV: {os.path.join(args.out, f'table{args.table}.csv')}")
    return 0 if results else 1


def build_parser():
    p = argparse.ArgumentParser(prog="d2a2",
                                description="guided depth super-resolution toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--data", required=True, help="manifest path or synthetic:N")
    t.add_argument("--scale", type=int, required=True, choices=(4, 8, 16))
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--crop", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="manifest path or synthetic:N")
    e.add_argument("--scale", type=int, required=True, choices=(4, 8, 16))
    e.add_argument("--report", required=True, help="CSV output path")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="super-resolve one depth map")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--rgb", required=True, help="HR guide image (PPM)")
    i.add_argument("--depth-lr", required=True, help="LR depth map (PGM)")
    i.add_argument("--scale", type=int, required=True)
    i.add_argument("--out", required=True, help="output PGM path")
    i.set_defaults(fn=cmd_infer)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--op", default="all", help="op name, group name, or 'all'")
    g.set_defaults(fn=cmd_gradcheck)

    d = sub.add_parser("diagnose", help="export gate/attention maps and the "
                                        "domain-alignment histogram")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--rgb", required=True)
    d.add_argument("--depth-lr", required=True)
    d.add_argument("--scale", type=int, default=4)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_diagnose)

    a = sub.add_parser("ablate", help="train every row of an ablation table")
    a.add_argument("--table", type=int, required=True, choices=(2, 3, 4))
    a.add_argument("--out", required=True)
    a.add_argument("--pairs", type=int, default=20)
    a.add_argument("--steps", type=int, default=2000)
    a.add_argument("--scale", type=int, default=4, choices=(4, 8, 16))
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

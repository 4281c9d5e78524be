"""Deterministic training loop, evaluation, and the flat config file format."""

import csv
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .autodiff import Tensor, record
from .data import augment, random_crop
from .losses import l1_loss, rmse
from .model import ModelConfig, save_checkpoint
from .optim import Adam, NonFiniteGradient


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    steps: int = 500
    crop: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0   # 0 = final checkpoint only
    holdout: int = 0            # trailing pairs reserved for evaluation

    def validate(self):
        if self.lr <= 0 or self.batch_size < 1 or self.steps < 1:
            raise ValueError("lr, batch_size and steps must be positive")
        if self.crop < 1:
            raise ValueError("crop must be positive")
        return self


def parse_config_file(path):
    """Flat key=value text holding both model and train keys; unknown keys
    are errors."""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    model_lines, train_lines = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key = line.split("=", 1)[0].strip()
            if key in model_keys:
                model_lines.append(line)
            elif key in train_keys:
                train_lines.append(line)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key '{key}'")
    model_cfg = ModelConfig.from_text("\n".join(model_lines))
    train_cfg = TrainConfig()
    for line in train_lines:
        key, val = (s.strip() for s in line.split("=", 1))
        kind = TrainConfig.__dataclass_fields__[key].type
        setattr(train_cfg, key, int(val) if kind in (int, "int") else float(val))
    return model_cfg, train_cfg.validate()


@dataclass
class EvalReport:
    scale: int
    per_sample: list = field(default_factory=list)   # (name, rmse native units)
    mean_rmse: float = float("nan")
    wall_clock: float = 0.0
    model_id: str = ""

    def finalize(self):
        if self.per_sample:
            self.mean_rmse = float(np.mean([r for _, r in self.per_sample]))
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "rmse"])
            for name, err in self.per_sample:
                w.writerow([name, f"{err:.9g}"])
            w.writerow(["mean", f"{self.mean_rmse:.9g}"])
            w.writerow(["scale", self.scale])
            w.writerow(["wall_clock_s", f"{self.wall_clock:.3f}"])
            if self.model_id:
                w.writerow(["model", self.model_id])


@dataclass
class TrainResult:
    losses: list
    final_loss: float          # trailing window-50 mean
    checkpoint: str
    report: object = None
    halted: bool = False
    halt_reason: str = ""


def _prepare_batch(pairs, cfg, rng, dtype):
    """Crop + augment + per-sample normalization; returns stacked arrays."""
    rgbs, lrs, targets = [], [], []
    for pair in pairs:
        h, w = pair.size
        if cfg.crop < min(h, w):
            pair = random_crop(pair, cfg.crop, rng)
        pair = augment(pair, rng, rotate=pair.size[0] == pair.size[1])
        rec = pair.record()
        rgbs.append(pair.rgb_hr.data[0])
        lrs.append(rec.normalize(pair.depth_lr.data[0]))
        targets.append(rec.normalize(pair.depth_hr.data[0]))
    return (Tensor(np.stack(rgbs).astype(dtype)),
            Tensor(np.stack(lrs).astype(dtype)),
            Tensor(np.stack(targets).astype(dtype)))


def train(model, pairs, cfg, out_dir, scale=None):
    """Seeded, single-threaded training; returns the loss trace and final
    checkpoint path.  A non-finite loss or gradient halts the run with the
    last good checkpoint retained."""
    cfg.validate()
    if not pairs:
        raise ValueError("training dataset is empty")
    scale = scale if scale is not None else pairs[0].scale
    os.makedirs(out_dir, exist_ok=True)
    holdout_pairs = pairs[len(pairs) - cfg.holdout:] if cfg.holdout else []
    train_pairs = pairs[:len(pairs) - cfg.holdout] if cfg.holdout else pairs
    if not train_pairs:
        raise ValueError("holdout leaves no training pairs")

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    ckpt_path = os.path.join(out_dir, "model_final.ckpt")
    last_good = None
    losses = []
    halted, halt_reason = False, ""

    for step in range(cfg.steps):
        idx = rng.integers(0, len(train_pairs), cfg.batch_size)
        rgb, lr_depth, target = _prepare_batch([train_pairs[i] for i in idx], cfg, rng, model.dtype)
        with record() as tape:
            out = model.forward(rgb, lr_depth, scale)
            loss = l1_loss(out, target)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            halted, halt_reason = True, f"non-finite loss at step {step}"
            break
        tape.backward(loss)
        try:
            opt.step()
        except NonFiniteGradient as e:
            halted, halt_reason = True, f"step {step}: {e}"
            break
        opt.zero_grad()
        losses.append(loss_val)
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            last_good = os.path.join(out_dir, f"model_step{step + 1:06d}.ckpt")
            save_checkpoint(model, last_good)

    if not halted:
        save_checkpoint(model, ckpt_path)
        last_good = ckpt_path

    with open(os.path.join(out_dir, "loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, f"{v:.9g}"])

    window = losses[-50:] if losses else [float("nan")]
    report = evaluate(model, holdout_pairs or train_pairs, scale) if not halted else None
    if report is not None:
        report.to_csv(os.path.join(out_dir, "eval.csv"))
    return TrainResult(losses, float(np.mean(window)), last_good, report,
                       halted, halt_reason)


def evaluate(model, pairs, scale):
    """Full-image forward per pair; RMSE in native units."""
    t0 = time.time()
    report = EvalReport(scale=scale)
    for pair in pairs:
        rec = pair.record()
        rgb = Tensor(pair.rgb_hr.data.astype(model.dtype))
        lr_depth = Tensor(rec.normalize(pair.depth_lr.data).astype(model.dtype))
        out = model.forward(rgb, lr_depth, scale)
        target = rec.normalize(pair.depth_hr.data).astype(model.dtype)
        report.per_sample.append((pair.name or f"pair{len(report.per_sample)}",
                                  rmse(out.data, target, rec)))
    report.wall_clock = time.time() - t0
    return report.finalize()

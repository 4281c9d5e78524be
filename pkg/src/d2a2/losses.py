"""Training loss and evaluation metric."""

import math

import numpy as np

from .autodiff import Tensor, _tape_for, as_tensor


def l1_loss(pred, target):
    """Mean absolute error over all elements; gradient is sign(diff)/N."""
    pred = as_tensor(pred)
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.abs(diff).mean())
    tape = _tape_for(pred, target)
    if tape is not None:
        out.requires_grad = True
        n = diff.size

        def bwd():
            g = out.grad
            if g is None:
                return
            sg = g * np.sign(diff) / n
            if pred.requires_grad:
                pred.accumulate(sg)
            if target.requires_grad:
                target.accumulate(-sg)

        tape.record(bwd)
    return out


def rmse(pred, target, record):
    """Root mean square error in native units after denormalization."""
    if record is None:
        raise ValueError("rmse needs a NormalizationRecord to restore native units")
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise ValueError(f"rmse shape mismatch: {p.shape} vs {t.shape}")
    diff = record.denormalize(p) - record.denormalize(t)
    return float(math.sqrt(np.mean(diff * diff)))

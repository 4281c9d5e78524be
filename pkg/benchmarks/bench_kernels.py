#!/usr/bin/env python3
"""Compare the compiled kernels against the NumPy fallback on
training-shaped inputs, plus one full train step per backend.

Run: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from d2a2 import _kernels_np, backend
from d2a2.autodiff import Tensor, record
from d2a2.losses import l1_loss
from d2a2.model import ModelConfig, build_model


def timeit(fn, repeats, warmup=3):
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def kernel_cases(dtype=np.float32):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 32, 64, 64)).astype(dtype)
    cols = rng.standard_normal((4, 32 * 9, 64 * 64)).astype(dtype)
    ys = rng.uniform(-1, 64, (4, 64 * 64)).astype(dtype)
    xs = rng.uniform(-1, 64, (4, 64 * 64)).astype(dtype)
    gout = rng.standard_normal((4, 32, 64 * 64)).astype(dtype)
    return [
        ("im2col 3x3 (4,32,64,64)", lambda k: k.im2col(x, 3, 3, 1, 1)),
        ("col2im 3x3", lambda k: k.col2im(cols, 32, 64, 64, 3, 3, 1, 1)),
        ("bilinear_gather 16k pts", lambda k: k.bilinear_gather(x, ys, xs)),
        ("bilinear_backward full", lambda k: k.bilinear_backward(x, ys, xs, gout, True, True)),
    ]


def train_step_case():
    rng = np.random.default_rng(1)
    model = build_model(ModelConfig(base_channels=16), dtype=np.float32)
    rgb = Tensor(rng.uniform(0, 1, (4, 3, 64, 64)).astype(np.float32))
    dlr = Tensor(rng.uniform(0, 1, (4, 1, 16, 16)).astype(np.float32))
    tgt = Tensor(rng.uniform(0, 1, (4, 1, 64, 64)).astype(np.float32))

    def step():
        with record() as tape:
            loss = l1_loss(model.forward(rgb, dlr, 4), tgt)
        tape.backward(loss)
        model.zero_grad()

    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()

    # raw per-kernel comparison of the two implementations
    mods = {"numpy": _kernels_np}
    try:
        from d2a2 import _kernels
        mods["cython"] = _kernels
    except ImportError:
        print("compiled kernels not built; benchmarking the NumPy fallback only")
    names = list(mods)

    print(f"{'kernel':<28}" + "".join(f"{n:>14}" for n in names) + f"{'speedup':>10}")
    for label, fn in kernel_cases():
        times = {n: timeit(lambda m=m: fn(m), args.repeats) for n, m in mods.items()}
        row = f"{label:<28}" + "".join(f"{times[n] * 1e3:>12.2f}ms" for n in names)
        if len(names) == 2:
            row += f"{times['numpy'] / times['cython']:>9.1f}x"
        print(row)

    print()
    for name in backend.available_backends():
        backend.set_backend(name)
        step = train_step_case()
        dt = timeit(step, max(3, args.repeats // 3))
        print(f"full train step (batch 4, 64x64, C=16) [{name}]: {dt * 1e3:.1f} ms")
    backend.set_backend("auto")


if __name__ == "__main__":
    main()

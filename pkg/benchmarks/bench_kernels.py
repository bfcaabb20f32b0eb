"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 8]

Prints per-kernel median wall times for both backends, their ratio and
the max absolute difference between the two outputs.  A full training
step of the toy network is timed as well.
"""
import argparse
import time

import numpy as np

from depthsr import kernels
from depthsr.data import make_sr_sample, synth_scene
from depthsr.losses import LossWeights
from depthsr.network import NetworkConfig, batch_loss_gradients, init_parameters, sample_arrays


def timed(fn, repeat):
    fn()  # warm-up (includes jit compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def cases(batch, rng):
    x = rng.standard_normal((batch, 16, 64, 64))
    w = rng.standard_normal((16, 16, 3, 3)) * 0.1
    b = rng.standard_normal(16)
    g = rng.standard_normal((batch, 16, 64, 64))
    pooled, idx = kernels.maxpool2(x)
    gp = rng.standard_normal(pooled.shape)
    wt = rng.standard_normal((16, 16, 2, 2)) * 0.1
    small = rng.standard_normal((batch, 16, 32, 32))
    gt_out = rng.standard_normal((batch, 16, 64, 64))
    return {
        "conv2d 16->16 64x64": lambda: kernels.conv2d(x, w, b),
        "conv2d backward": lambda: kernels.conv2d_backward(x, w, g),
        "maxpool2": lambda: kernels.maxpool2(x)[0],
        "maxpool2 backward": lambda: kernels.maxpool2_backward(gp, idx),
        "conv_transpose2 (shared)": lambda: kernels.conv_transpose2(small, wt, b),
        "conv_transpose2 bwd (shared)": lambda: kernels.conv_transpose2_backward(small, wt, gt_out),
    }


def train_step(batch):
    cfg = NetworkConfig()
    p = init_parameters(cfg)
    samples = [make_sr_sample(synth_scene(s, 64, 64), 4) for s in range(batch)]
    up, col, gt = sample_arrays(samples, np.float64)
    return lambda: batch_loss_gradients(p, up, col, gt, LossWeights())[0].total


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    work = cases(args.batch, rng)
    work[f"toy train step (batch {args.batch})"] = train_step(args.batch)

    print(f"{'kernel':<28} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in work.items():
        kernels.set_backend("numba")
        t_nb, out_nb = timed(fn, args.repeat)
        kernels.set_backend("numpy")
        t_np, out_np = timed(fn, args.repeat)
        print(f"{name:<28} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:8.2f} "
              f"{max_diff(out_nb, out_np):11.2e}")
    kernels.set_backend("numba")


if __name__ == "__main__":
    main()

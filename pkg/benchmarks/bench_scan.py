"""Compiled vs numpy linear-recurrence kernels, forward and backward.

    python3 benchmarks/bench_scan.py [--batch 32] [--len 128] [--state 64] [--lanes 64]

Also times the convolution-kernel path on the same time-invariant system
and prints one JSON object per configuration.
"""

import argparse
import json
import time

import numpy as np

from msimamba import _scan
from msimamba.tsfb import apply_kernel, ssm_kernel
from msimamba.verify import random_stable_ssm


def best_of(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(B, S, N, D, reps, dtype, seed=0):
    rng = np.random.default_rng(seed)
    abar, bbar, c = random_stable_ssm(rng, N)
    A = np.ascontiguousarray(np.broadcast_to(abar, (B, S, N)), dtype=dtype)
    Bb = np.ascontiguousarray(np.broadcast_to(bbar, (B, S, N)), dtype=dtype)
    c = c.astype(dtype)
    u = rng.normal(size=(B, S, D)).astype(dtype)
    gy = rng.normal(size=(B, S, D)).astype(dtype)
    row = {"B": B, "S": S, "N": N, "D": D, "dtype": np.dtype(dtype).name}
    ref = None
    for be in _scan.available_backends():
        y, h = _scan.scan_forward(A, Bb, c, u, backend=be)
        if ref is None:
            ref = y
        row[f"{be}.max_abs_diff"] = float(np.max(np.abs(y - ref)))
        row[f"{be}.forward_ms"] = 1e3 * best_of(lambda: _scan.scan_forward(A, Bb, c, u, backend=be), reps)
        row[f"{be}.backward_ms"] = 1e3 * best_of(
            lambda: _scan.scan_backward(A, Bb, c, u, h, gy, backend=be), reps)
    row["kernel.forward_ms"] = 1e3 * best_of(lambda: apply_kernel(ssm_kernel(abar, bbar, c, S), u), reps)
    if "compiled.forward_ms" in row:
        row["speedup.forward"] = row["numpy.forward_ms"] / row["compiled.forward_ms"]
        row["speedup.backward"] = row["numpy.backward_ms"] / row["compiled.backward_ms"]
    return row


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--len", type=int, nargs="*", default=[16, 64, 128])
    ap.add_argument("--state", type=int, default=64)
    ap.add_argument("--lanes", type=int, default=64)
    ap.add_argument("--reps", type=int, default=10)
    args = ap.parse_args()
    print(json.dumps({"backends": _scan.available_backends(), "default": _scan.BACKEND}))
    for S in args.len:
        for dtype in (np.float32, np.float64):
            print(json.dumps(bench(args.batch, S, args.state, args.lanes, args.reps, dtype)))


if __name__ == "__main__":
    main()

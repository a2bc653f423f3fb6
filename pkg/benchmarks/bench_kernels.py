#!/usr/bin/env python3
"""Time the compiled convolution kernels against the pure-numpy fallbacks.

The numba paths are what the library dispatches to by default; the numpy
paths are selected by CMRESTORE_DISABLE_NUMBA=1. Run:

    python benchmarks/bench_kernels.py [--size 256] [--repeats 5]
"""

import argparse
import time

import numpy as np

from cmrestore import _kernels
from cmrestore.operators import bicubic_taps, gaussian_taps


def best_of(fn, *args, repeats=5):
    fn(*args)  # warmup (includes JIT compilation for the numba paths)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--channels", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if not _kernels.NUMBA_ENABLED:
        print("numba path unavailable (disabled or not installed); "
              "timing the numpy fallbacks only")

    g = np.random.default_rng(0)
    x = g.standard_normal((args.size, args.size, args.channels))
    blur = gaussian_taps(9, 3.0)
    t1, a1 = bicubic_taps(4)
    sr = np.outer(t1, t1)
    v = g.standard_normal((args.size // 4, args.size // 4, args.channels))

    cases = [
        ("conv2d_circular 9x9", _kernels.conv2d_circular,
         _kernels.conv2d_circular_numpy, (x, blur, 4, 4)),
        ("conv2d_decimate 16x16 f=4", _kernels.conv2d_decimate,
         _kernels.conv2d_decimate_numpy, (x, sr, a1, a1, 4)),
        ("conv2d_zerofill 16x16 f=4", _kernels.conv2d_zerofill,
         _kernels.conv2d_zerofill_numpy, (v, sr[::-1, ::-1], 15 - a1, 15 - a1, 4)),
    ]

    print(f"grid {args.size}x{args.size}x{args.channels}, best of {args.repeats}")
    print(f"{'kernel':<28} {'active':>10} {'numpy':>10} {'speedup':>9}")
    for name, active, fallback, call_args in cases:
        res_a = active(*call_args)
        res_n = fallback(*call_args)
        gap = float(np.max(np.abs(res_a - res_n)))
        ta = best_of(active, *call_args, repeats=args.repeats)
        tn = best_of(fallback, *call_args, repeats=args.repeats)
        print(f"{name:<28} {ta * 1e3:>8.2f}ms {tn * 1e3:>8.2f}ms "
              f"{tn / ta:>8.1f}x  (max diff {gap:.1e})")


if __name__ == "__main__":
    main()

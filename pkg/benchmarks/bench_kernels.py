#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the hot operations at desk scale (64x64 frames, the default
encoder widths) on both backends and prints per-op timings plus the
speedup.  Verifies bit parity on every timed case first.

    python benchmarks/bench_kernels.py [--repeats 5] [--csv out.csv]
"""

import argparse
import time

import numpy as np

from dynrep import numerics
from dynrep.numerics import get_kernels


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, make_args, run, check, repeats):
    rows = []
    args_c = make_args()
    args_p = make_args()
    out_c = run(get_kernels("compiled"), *args_c)
    out_p = run(get_kernels("python"), *args_p)
    if not check(out_c, out_p):
        raise AssertionError(f"backend mismatch in {name}")
    t_c = timeit(lambda: run(get_kernels("compiled"), *args_c), repeats)
    t_p = timeit(lambda: run(get_kernels("python"), *args_p), repeats)
    rows.append((name, t_c * 1e3, t_p * 1e3, t_p / t_c))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--csv", default=None, help="also write results as CSV")
    args = parser.parse_args()

    if numerics.kernel_backend() != "compiled":
        raise SystemExit("compiled kernels are not built; run `python setup.py build_ext --inplace`")

    rng = numerics.make_rng(0)
    rows = []

    # conv forward: encoder-scale 3->8 at 64x64 and 16->32 at 16x16
    for label, (cin, cout, hw) in [("conv_fwd 3->8 @64", (3, 8, 64)), ("conv_fwd 16->32 @16", (16, 32, 16))]:
        x = rng.random((cin, hw, hw)).astype(np.float32)
        k = rng.standard_normal((cout, cin, 3, 3)).astype(np.float32)
        xpad = np.pad(x, ((0, 0), (1, 1), (1, 1)))

        def make():
            return (xpad, k, np.empty((cout, hw, hw), np.float32))

        def run(kern, xp, kk, out):
            kern.conv2d_forward_core(xp, kk, out, 1)
            return out

        rows += bench_case(label, make, run, np.array_equal, args.repeats)

    # conv backward pieces at 3->8 @64
    x = rng.random((3, 64, 64)).astype(np.float32)
    k = rng.standard_normal((8, 3, 3, 3)).astype(np.float32)
    gy = rng.standard_normal((8, 64, 64)).astype(np.float32)
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1)))

    rows += bench_case(
        "conv_grad_input 3->8 @64",
        lambda: (k, gy, np.zeros(xpad.shape, np.float64)),
        lambda kern, kk, g, buf: (kern.conv2d_grad_input_core(kk, g, buf, 1), buf)[1],
        np.array_equal,
        args.repeats,
    )
    rows += bench_case(
        "conv_grad_kernels 3->8 @64",
        lambda: (xpad, gy, np.zeros(k.shape, np.float64)),
        lambda kern, xp, g, buf: (kern.conv2d_grad_kernels_core(xp, g, buf, 1), buf)[1],
        np.array_equal,
        args.repeats,
    )

    a = rng.random(3 * 64 * 64).astype(np.float32)
    b = rng.random(3 * 64 * 64).astype(np.float32)
    rows += bench_case(
        "frobenius_inner 12288",
        lambda: (a, b),
        lambda kern, aa, bb: kern.frobenius_inner_flat(aa, bb),
        lambda x_, y_: x_ == y_,
        max(args.repeats, 50),
    )

    width = max(len(r[0]) for r in rows)
    print(f"{'op':<{width}}  {'compiled ms':>12}  {'python ms':>12}  {'speedup':>8}")
    for name, tc, tp, speed in rows:
        print(f"{name:<{width}}  {tc:12.3f}  {tp:12.3f}  {speed:7.1f}x")

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("op,compiled_ms,python_ms,speedup\n")
            for name, tc, tp, speed in rows:
                fh.write(f"{name},{tc!r},{tp!r},{speed!r}\n")
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()

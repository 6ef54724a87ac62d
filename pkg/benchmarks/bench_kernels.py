"""Compare the compiled and pure-numpy kernel backends on the hot ops.

Runs each workload on both backend modules directly (bypassing the
FACESAL_BACKEND selection) and reports the median wall time plus the
speedup of the compiled path. The first compiled call pays the JIT
cost, so every workload is warmed on both backends before timing.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--scale S]
"""

import argparse
import statistics
import time

import numpy as np

from facesal.kernels import numba_backend, numpy_backend


def build_workloads(scale):
    """Layer shapes of the bundled 16x16 classifier, spatially scaled."""
    rng = np.random.default_rng(0)
    f32 = np.float32
    side = 16 * scale
    conv_x = rng.standard_normal((1, side, side)).astype(f32)
    conv_w = rng.standard_normal((4, 1, 3, 3)).astype(f32)
    conv_b = rng.standard_normal(4).astype(f32)
    conv_out = numpy_backend.conv2d_forward(conv_x, conv_w, conv_b, 1, 1)
    pool_x = rng.standard_normal((4, side, side)).astype(f32)
    pool_out, pool_arg = numpy_backend.maxpool_forward(pool_x, 2, 2)
    dense_x = rng.standard_normal(256 * scale).astype(f32)
    dense_w = rng.standard_normal((16, 256 * scale)).astype(f32)
    dense_b = rng.standard_normal(16).astype(f32)
    dense_up = rng.standard_normal(16).astype(f32)

    return [
        ("conv2d forward", lambda be: be.conv2d_forward(
            conv_x, conv_w, conv_b, 1, 1)),
        ("conv2d backward", lambda be: be.conv2d_backward(
            conv_x, conv_w, conv_out, 1, 1)),
        ("maxpool forward", lambda be: be.maxpool_forward(pool_x, 2, 2)),
        ("maxpool backward", lambda be: be.maxpool_backward(
            pool_out, pool_arg, pool_x.shape)),
        ("dense forward", lambda be: be.dense_forward(
            dense_x, dense_w, dense_b)),
        ("dense backward", lambda be: be.dense_backward(
            dense_x, dense_w, dense_up)),
        ("relu backward", lambda be: be.relu_backward(pool_x, pool_x)),
    ]


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timed runs per op (median reported)")
    parser.add_argument("--scale", type=int, default=1,
                        help="workload size multiplier")
    args = parser.parse_args()

    workloads = build_workloads(args.scale)
    for _, fn in workloads:  # trigger JIT before any timing
        fn(numba_backend)
        fn(numpy_backend)

    print(f"{'op':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}")
    for name, fn in workloads:
        plain = median_time(lambda: fn(numpy_backend), args.repeats)
        compiled = median_time(lambda: fn(numba_backend), args.repeats)
        print(f"{name:<18} {plain * 1e3:>10.3f} {compiled * 1e3:>10.3f} "
              f"{plain / compiled:>8.1f}x")


if __name__ == "__main__":
    main()

"""Time the numba kernels against the pure-numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--grid 32] [--channels 32] [--reps 50]

Imports both kernel builds directly, so the SLNN_BACKEND selection does
not matter here.
"""

import argparse
import time

import numpy as np

from slnn.kernels import numba_impl, numpy_impl


def _time(fn, *args, reps):
    fn(*args)  # warm-up (and JIT compile on the numba side)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--grid", type=int, default=32, help="spatial extent")
    parser.add_argument("--channels", type=int, default=32)
    parser.add_argument("--reps", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    n, c = args.grid, args.channels
    xp = rng.standard_normal((c, n + 2, n + 2))  # same-padded input
    k = rng.standard_normal((c, c, 3, 3))
    g = rng.standard_normal((c, n, n))
    x_pool = rng.standard_normal((c, n, n))
    y_dec = rng.standard_normal((40, n // 4, n // 4))
    k_dec = rng.standard_normal((40, 1, 4, 4))
    g_dec = rng.standard_normal((1, n, n))

    cases = [
        ("conv2d forward", (xp, k, 1), "conv2d_forward"),
        ("conv2d grad input", (g, k, 1, n + 2, n + 2), "conv2d_grad_input"),
        ("conv2d grad kernels", (g, xp, 1, 3, 3), "conv2d_grad_kernels"),
        ("maxpool2d forward", (x_pool, 4, 4), "maxpool2d_forward"),
        ("deconv2d forward", (y_dec, k_dec, 4), "deconv2d_forward"),
        ("deconv2d grad input", (g_dec, k_dec, 4), "deconv2d_grad_input"),
    ]

    print(f"grid {n}x{n}, {c} channels, {args.reps} reps (times in ms)")
    print(f"{'kernel':<22} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for label, call_args, name in cases:
        t_np = _time(getattr(numpy_impl, name), *call_args, reps=args.reps) * 1e3
        t_nb = _time(getattr(numba_impl, name), *call_args, reps=args.reps) * 1e3
        print(f"{label:<22} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()

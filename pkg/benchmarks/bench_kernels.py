#!/usr/bin/env python3
"""Benchmark the jitted conv kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--repeat 20]

Times forward, input-gradient, and weight-gradient kernels on a few shapes
representative of candidate training (small channels, medium sequences) and
prints the per-call times plus the numba/numpy speedup.  Run with
RFSEARCH_NUMBA=0 to confirm the fallback is selected automatically.
"""

import argparse
import time

import numpy as np

from rfsearch import _kernels
from rfsearch.tensorops import tap_offsets

SHAPES = [
    # (batch, cin, cout, T, K, dilation)
    (32, 8, 16, 64, 2, 4),
    (32, 16, 16, 96, 2, 16),
    (32, 16, 16, 256, 3, 32),
    (8, 25, 25, 784, 7, 64),
]


def _time(fn, args, repeat):
    fn(*args)  # warm (JIT compile / cache load)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    print(f"active backend: {_kernels.backend()}")
    if not _kernels.numba_available():
        print("numba unavailable or disabled; timing the numpy path against itself")

    header = f"{'shape (B,Cin,Cout,T,K,d)':<28} {'kernel':<10} {'numba':>10} {'numpy':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for B, cin, cout, T, K, d in SHAPES:
        x = rng.standard_normal((B, cin, T))
        w = rng.standard_normal((cout, cin, K))
        b = rng.standard_normal(cout)
        go = rng.standard_normal((B, cout, T))
        off = tap_offsets(K, d, "causal")
        pairs = [
            ("forward", _kernels.conv1d_forward, _kernels.conv1d_forward_numpy, (x, w, b, off)),
            ("grad_in", _kernels.conv1d_grad_input, _kernels.conv1d_grad_input_numpy, (go, w, off)),
            ("grad_w", _kernels.conv1d_grad_weights, _kernels.conv1d_grad_weights_numpy, (go, x, K, off)),
        ]
        label = f"({B},{cin},{cout},{T},{K},{d})"
        for name, fast, slow, fargs in pairs:
            t_fast = _time(fast, fargs, args.repeat)
            t_slow = _time(slow, fargs, args.repeat)
            print(
                f"{label:<28} {name:<10} {t_fast * 1e6:>8.1f}us {t_slow * 1e6:>8.1f}us "
                f"{t_slow / t_fast:>7.2f}x"
            )
            label = ""


if __name__ == "__main__":
    main()

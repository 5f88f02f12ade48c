#!/usr/bin/env python3
"""Benchmark the batch sequence-arithmetic kernels: numba JIT vs pure numpy.

The numpy fallback is selected with SMART_TCP_PURE_NUMPY=1; run both ways
to compare, e.g.

    python3 benchmarks/bench_kernels.py
    SMART_TCP_PURE_NUMPY=1 python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from smart_tcp import kernels


def bench(fn, *args, repeats=5):
    fn(*args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    n = 5_000_000
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2**32, size=n, dtype=np.uint32)
    b = rng.integers(0, 2**32, size=n, dtype=np.uint32)
    payload = rng.integers(0, 1500, size=n, dtype=np.uint32)
    syn = rng.integers(0, 2, size=n, dtype=np.uint32)
    fin = rng.integers(0, 2, size=n, dtype=np.uint32)

    path = "numba" if kernels.HAVE_NUMBA else "numpy"
    print(f"kernel path: {path}, n={n}")
    for name, fn, args in (
        ("batch_seq_add", kernels.batch_seq_add, (a, b)),
        ("batch_seq_lt", kernels.batch_seq_lt, (a, b)),
        ("batch_alu_ack", kernels.batch_alu_ack, (a, payload, syn, fin)),
    ):
        t = bench(fn, *args)
        print(f"  {name:<14} {t * 1e3:8.2f} ms  ({n / t / 1e6:7.1f} M ops/s)")


if __name__ == "__main__":
    main()

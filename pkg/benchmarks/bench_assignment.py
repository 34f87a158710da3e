#!/usr/bin/env python3
"""Benchmark the assignment kernel: numba @njit lane vs pure-numpy fallback.

Both lanes implement the same O(n^3) shortest-augmenting-path algorithm and
produce identical permutations; this script times them side by side over a
range of matrix sizes.

Usage: python benchmarks/bench_assignment.py [--sizes 8,16,32,64,128]
"""

import argparse
import time

import numpy as np

from mrparse import kernels


def bench(fn, matrices, repeats):
    fn(matrices[0])  # warm up (JIT compilation / cache load)
    start = time.perf_counter()
    for _ in range(repeats):
        for cost in matrices:
            fn(cost)
    return (time.perf_counter() - start) / (repeats * len(matrices))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="8,16,32,64,128")
    parser.add_argument("--instances", type=int, default=20)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"numba available: {kernels.HAS_NUMBA}")
    print(f"{'n':>5} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    rng = np.random.default_rng(0)
    for n in sizes:
        matrices = [rng.normal(size=(n, n)) for _ in range(args.instances)]
        for cost in matrices:
            jit = (kernels._assignment_jit(cost) if kernels.HAS_NUMBA
                   else kernels._assignment_loops(cost))
            assert (jit == kernels._assignment_numpy(cost)).all(), "lane mismatch"
        numpy_time = bench(kernels._assignment_numpy, matrices, args.repeats)
        if kernels.HAS_NUMBA:
            jit_time = bench(kernels._assignment_jit, matrices, args.repeats)
        else:
            jit_time = bench(kernels._assignment_loops, matrices, args.repeats)
        print(f"{n:>5} {jit_time * 1e3:>12.3f} {numpy_time * 1e3:>12.3f} "
              f"{numpy_time / jit_time:>8.1f}x")


if __name__ == "__main__":
    main()

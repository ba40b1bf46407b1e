"""Time the numpy and compiled Sinkhorn kernels on training-sized problems.

    python benchmarks/bench_sinkhorn.py [--repeat 5] [--iters 100]

Both kernels run a fixed number of iterations (tol=0) on the same inputs,
so the timings compare equal work. The last column is the largest
elementwise difference between the two transport plans.
"""
import argparse
import time

import numpy as np

from psco import _backend
from psco.encoder import l2_normalize

SHAPES = [(16, 256), (64, 1024), (128, 4096), (256, 16384)]


def best_time(kernel, L, log_r, log_c, iters, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = kernel(L, log_r, log_c, iters, 0.0)
        best = min(best, time.perf_counter() - t0)
    return best, out[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--eps", type=float, default=0.025)
    ap.add_argument("--max-m", type=int, default=16384)
    args = ap.parse_args(argv)

    py = _backend.get_kernel("python")
    try:
        cy = _backend.get_kernel("cython")
    except ImportError:
        cy = None
        print("compiled kernel not built; timing the numpy kernel only")

    rng = np.random.default_rng(0)
    print(f"{'N':>5} {'M':>6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max |dP|':>10}")
    for n, m in SHAPES:
        if m > args.max_m:
            continue
        d = 32
        S = l2_normalize(rng.standard_normal((n, d))) @ l2_normalize(rng.standard_normal((m, d))).T
        L = np.ascontiguousarray(S / args.eps)
        log_r, log_c = np.full(n, -np.log(n)), np.full(m, -np.log(m))
        t_py, P_py = best_time(py, L, log_r, log_c, args.iters, args.repeat)
        row = f"{n:>5} {m:>6} {1e3 * t_py:>10.2f}"
        if cy is not None:
            t_cy, P_cy = best_time(cy, L, log_r, log_c, args.iters, args.repeat)
            row += f" {1e3 * t_cy:>10.2f} {t_py / t_cy:>7.2f}x {np.abs(P_py - P_cy).max():>10.1e}"
        print(row)


if __name__ == "__main__":
    main()

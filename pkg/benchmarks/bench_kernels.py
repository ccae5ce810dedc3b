"""
Timing of the interpreted and numba-compiled kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

The compiled variants are warmed up once before timing so compilation is not
counted.  scipy's assignment solver is timed alongside as a reference point.
"""

import argparse
import time

import numpy as np
from scipy.optimize import linear_sum_assignment

from vistrack import _kernels as K


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def blobs(rng, size, n_blobs):
    ys, xs = np.mgrid[0:size, 0:size]
    grid = np.zeros((size, size), dtype=np.bool_)
    for _ in range(n_blobs):
        cx, cy, r = rng.uniform(0, size), rng.uniform(0, size), rng.uniform(3, size / 8)
        grid |= (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    return grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"numba enabled for default kernels: {K.NUMBA_ENABLED}")
    rows = []
    for n in (10, 50, 150):
        cost = rng.uniform(0, 1, (n, n))
        K.hungarian_jit(cost)
        rows.append((f"hungarian {n}x{n}",
                     best_of(lambda: K.hungarian_py(cost), args.repeat),
                     best_of(lambda: K.hungarian_jit(cost), args.repeat),
                     best_of(lambda: linear_sum_assignment(cost), args.repeat)))
    for size in (64, 256, 512):
        grid = blobs(rng, size, 12)
        K.label_components_jit(grid)
        rows.append((f"label {size}x{size}",
                     best_of(lambda: K.label_components_py(grid), args.repeat),
                     best_of(lambda: K.label_components_jit(grid), args.repeat),
                     None))

    print(f"{'kernel':<20}{'python [ms]':>14}{'numba [ms]':>14}{'speedup':>10}{'scipy [ms]':>13}")
    for name, py, jit, ref in rows:
        ref_s = f"{ref * 1e3:13.3f}" if ref is not None else f"{'-':>13}"
        print(f"{name:<20}{py * 1e3:14.3f}{jit * 1e3:14.3f}{py / jit:10.1f}{ref_s}")


if __name__ == "__main__":
    main()

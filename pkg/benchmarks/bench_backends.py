#!/usr/bin/env python3
"""Compare the numba kernels against their pure-numpy fallbacks.

Re-executes itself once per backend (the flavor is fixed at import time via
VOXPORT_BACKEND) and prints a side-by-side table of the hot kernels:
exact grid/brute KNN, farthest-point selection, the URS sampler, the
min-DaCVV pairwise scan, and the tile-diameter scan.

    python benchmarks/bench_backends.py [--points 50000] [--queries 500]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def timed(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def run_suite(n_points: int, n_queries: int) -> dict:
    from voxport.backend import backend_name
    from voxport.kernels import max_pair_dist, min_dacvv
    from voxport.knn import KnnIndex
    from voxport.sampling import SamplingMethod, baseline_sample, urs_sample

    rng = np.random.default_rng(0)
    pos = rng.uniform(0, 1, size=(n_points, 3))
    col = rng.integers(0, 256, size=(n_points, 3)).astype(np.float64)
    queries = rng.uniform(0, 1, size=(n_queries, 3))
    sub = pos[: min(n_points, 4000)]
    sub_col = col[: min(n_points, 4000)]
    n_samples = max(4, n_points // 4)
    n_cubes = max(1, n_samples // 50)
    while n_samples % n_cubes:
        n_cubes -= 1

    # warm-up pass compiles every kernel before timing
    KnnIndex(pos).query_many(queries[:2], 8)
    urs_sample(pos[:2000], 500, 50, 0)
    baseline_sample(pos[:2000], 500, SamplingMethod.FPS, 0)
    min_dacvv(sub[:100], sub_col[:100], sub[:100], sub_col[:100], 1.0, 1.0)
    max_pair_dist(sub[:1000])

    index = KnnIndex(pos)
    results = {
        "backend": backend_name(),
        f"knn {n_queries}q k=16": timed(lambda: index.query_many(queries, 16)),
        f"urs {n_samples} of {n_points}": timed(
            lambda: urs_sample(pos, n_samples, n_cubes, 0), repeat=1
        ),
        f"fps 2000 of {len(sub)}": timed(
            lambda: baseline_sample(sub, 2000, SamplingMethod.FPS, 0), repeat=1
        ),
        "min_dacvv 2000x2000": timed(
            lambda: min_dacvv(sub[:2000], sub_col[:2000], sub[:2000], sub_col[:2000], 1.0, 441.0)
        ),
        "max_pair_dist 4000": timed(lambda: max_pair_dist(sub)),
    }
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=50_000)
    parser.add_argument("--queries", type=int, default=500)
    parser.add_argument("--single", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.single:
        print(json.dumps(run_suite(args.points, args.queries)))
        return

    rows = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, VOXPORT_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, __file__, "--single", "--points", str(args.points),
             "--queries", str(args.queries)],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        rows.append(json.loads(out.stdout.splitlines()[-1]))

    keys = [k for k in rows[0] if k != "backend"]
    width = max(len(k) for k in keys)
    print(f"{'kernel':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k:<{width}}  {a:>10.2f}  {b:>10.2f}  {b / a:>7.1f}x")


if __name__ == "__main__":
    main()

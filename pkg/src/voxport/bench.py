"""Sampler benchmarking: wall time, traced peak memory, IFMI curves.

The fixture is a dense uniform blob with per-point colors and its rigid
translation stored in permuted order, so no index correspondence survives
between the two frames. Memory is the tracemalloc peak of Python-level
allocations during one sampling call (numba scratch buffers sized in k are
not traced; all O(n) buffers are numpy arrays and are).
"""

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .sampling import (
    DacvvContext,
    SampledTile,
    SamplingMethod,
    baseline_sample,
    ifmi_curve,
    urs_sample,
)

IFMI_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def blob_pair(n: int, seed: int, delta=(0.03, 0.01, -0.02)):
    """(prev, cur) position/color arrays of a translated, order-permuted blob."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 1.0, size=(n, 3))
    col = rng.integers(0, 256, size=(n, 3)).astype(np.float64)
    perm = np.random.default_rng(seed + 1).permutation(n)
    return (pos, col), ((pos + np.asarray(delta))[perm], col[perm])


def run_sampler(positions, n_samples, n_cubes, method: SamplingMethod, seed: int):
    if method == SamplingMethod.URS:
        idx, _ = urs_sample(positions, n_samples, n_cubes, seed)
    else:
        idx, _ = baseline_sample(positions, n_samples, method, seed)
    return idx


@dataclass
class BenchRow:
    method: str
    n_points: int
    time_ms: float
    peak_bytes: int


def bench_method(
    positions, n_samples, n_cubes, method: SamplingMethod, seed: int
) -> tuple[BenchRow, np.ndarray]:
    tracemalloc.start()
    t0 = time.perf_counter()
    idx = run_sampler(positions, n_samples, n_cubes, method, seed)
    elapsed = time.perf_counter() - t0
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return (
        BenchRow(method.value, positions.shape[0], elapsed * 1e3, peak),
        idx,
    )


def sampling_benchmark(
    n_points: int,
    methods: list[SamplingMethod],
    seed: int = 0,
    n_samples: int | None = None,
    n_cubes: int | None = None,
    with_ifmi: bool = True,
):
    """Benchmark each method on the blob pair; returns (rows, ifmi_table).

    ``n_samples`` defaults to a quarter of the points, mirroring the usual
    downsampling ratio; ``n_cubes`` keeps neighborhoods around 50 points.
    """
    if n_samples is None:
        n_samples = max(4, n_points // 4)
    if n_cubes is None:
        n_cubes = max(1, n_samples // 50)
        while n_samples % n_cubes:
            n_cubes -= 1
    if n_samples % n_cubes:
        raise InvalidArgumentError(
            f"n_samples={n_samples} not divisible by n_cubes={n_cubes}"
        )
    (pos_p, col_p), (pos_c, col_c) = blob_pair(n_points, seed)
    # numba warm-up so JIT compilation never lands inside a timed region
    warm = max(64, min(n_points, 512))
    for method in methods:
        run_sampler(pos_c[:warm], warm // 4, max(1, warm // 8), method, seed)

    rows, ifmi_table = [], {}
    ctx = DacvvContext.from_tile(pos_c, col_c) if with_ifmi else None
    for method in methods:
        row, idx_c = bench_method(pos_c, n_samples, n_cubes, method, seed)
        rows.append(row)
        if with_ifmi:
            idx_p = run_sampler(pos_p, n_samples, n_cubes, method, seed)
            cur = SampledTile(0, 1, idx_c, np.empty(0, np.int64), pos_c[idx_c], col_c[idx_c])
            prev = SampledTile(0, 0, idx_p, np.empty(0, np.int64), pos_p[idx_p], col_p[idx_p])
            ifmi_table[method.value] = ifmi_curve(cur, prev, IFMI_THRESHOLDS, ctx)
    return rows, ifmi_table

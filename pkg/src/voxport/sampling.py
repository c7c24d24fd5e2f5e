"""Tile samplers and sampling-quality metrics.

URS subdivides a tile into equal sub-cubes, picks one seeded random center
location per cube (nearest real point), and gathers KNN neighborhoods around
the centers. Because the cube grid and the center locations are functions of
the tile geometry and the seed only, the same seed re-selects (nearly) the
same physical points in consecutive frames, which is what the inter-frame
mapping metric rewards.

Baselines: RS (uniform), FPS (farthest-first), IDIS (inverse density),
GS (curvature), VS (voxel centroids snapped to real points).

Quality metrics: DaCVV, a normalized coordinate + color dissimilarity of a
point pair, and IFMI, the fraction of frame-t samples with a DaCVV-close
counterpart among frame-(t-1) samples.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .backend import NUMBA_ENABLED
from .errors import InsufficientPointsError, InvalidArgumentError
from .frames import Point
from .knn import KnnIndex


class SamplingMethod(Enum):
    URS = "urs"
    FPS = "fps"
    RS = "rs"
    IDIS = "idis"
    GS = "gs"
    VS = "vs"


@dataclass
class SampledTile:
    """Exactly N distinct point indices sampled from one tile."""

    tile_id: int
    frame_index: int
    point_indices: np.ndarray
    centers: np.ndarray
    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.point_indices = np.asarray(self.point_indices, dtype=np.int64)
        self.centers = np.asarray(self.centers, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.point_indices.shape[0]


def _mask_seed(seed: int) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def cube_grid_dims(extent: np.ndarray, n_cubes: int) -> tuple[int, int, int]:
    """Factorization of ``n_cubes`` whose per-axis counts best match the
    box aspect ratio (log-space least squares, lexicographic tie-break)."""
    ext = np.maximum(np.asarray(extent, dtype=np.float64), 1e-12)
    scale = (ext.prod() / n_cubes) ** (1.0 / 3.0)
    ideal = np.log(np.maximum(ext / scale, 1e-12))
    best, best_score = None, np.inf
    for a in range(1, n_cubes + 1):
        if n_cubes % a:
            continue
        rest = n_cubes // a
        for b in range(1, rest + 1):
            if rest % b:
                continue
            c = rest // b
            score = float(((np.log([a, b, c]) - ideal) ** 2).sum())
            if score < best_score - 1e-15 or (
                abs(score - best_score) <= 1e-15 and (a, b, c) < best
            ):
                best, best_score = (a, b, c), score
    return best


def urs_sample(
    positions: np.ndarray, n_samples: int, n_cubes: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-random sample of exactly ``n_samples`` distinct indices.

    Returns ``(indices, centers)``; ``centers`` holds the ``n_cubes`` chosen
    central-point indices. Empty cubes hand their quota to the nearest
    occupied cube; duplicate neighbors are deduplicated and each deficient
    neighborhood refills by next-nearest expansion.

    One CSR over the sub-cube grid backs both cube membership and the exact
    neighborhood queries, keeping peak memory a few machine words per point.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < n_samples:
        raise InsufficientPointsError(
            f"tile has {n} points, cannot sample {n_samples}"
        )
    if n_samples % n_cubes:
        raise InvalidArgumentError(
            f"n_samples={n_samples} not divisible by n_cubes={n_cubes}"
        )
    n_per = n_samples // n_cubes
    seed = _mask_seed(seed)

    lo = positions.min(axis=0)
    ext = positions.max(axis=0) - lo
    dims = np.asarray(cube_grid_dims(ext, n_cubes), dtype=np.int64)
    cell = np.maximum(ext / dims, 1e-300)
    lin = kernels.cell_linear_ids(positions, lo, cell, dims)
    order, starts = kernels.sort_by_cell(lin, n_cubes)
    del lin
    occupied = np.flatnonzero(np.diff(starts) > 0)

    # empty cubes donate their quota to the nearest occupied cube
    quota = dict.fromkeys(occupied.tolist(), 1)
    centers_xyz = lambda q: lo + (
        np.column_stack(np.unravel_index(q, dims)) + 0.5
    ) * cell
    empty = np.setdiff1d(np.arange(n_cubes), occupied)
    if empty.size:
        occ_c = centers_xyz(occupied)
        for e, ec in zip(empty.tolist(), centers_xyz(empty)):
            dist = ((occ_c - ec) ** 2).sum(axis=1)
            quota[int(occupied[np.argmin(dist)])] += 1

    use_grid = NUMBA_ENABLED and n >= 64

    def neighbors_of(center: int, k: int) -> np.ndarray:
        if use_grid:
            return kernels.grid_knn(
                positions, lo, cell, dims, order, starts, positions[center], k
            )[0]
        return kernels.brute_knn(positions, positions[center], k)[0]

    taken = np.zeros(n, dtype=bool)
    picked = np.empty(n_samples, dtype=np.int64)
    centers = np.empty(n_cubes, dtype=np.int64)
    n_picked = 0
    n_centers = 0
    for q in occupied.tolist():
        stream = np.random.default_rng([seed, q])
        cube_lo = lo + np.array(np.unravel_index(q, dims)) * cell
        pts_in_cube = order[starts[q] : starts[q + 1]]
        for _ in range(quota[q]):
            loc = cube_lo + stream.uniform(0.0, 1.0, size=3) * cell
            d2 = ((positions[pts_in_cube] - loc) ** 2).sum(axis=1)
            center = int(pts_in_cube[np.lexsort((pts_in_cube, d2))[0]])
            centers[n_centers] = center
            n_centers += 1
            need = n_per
            k = min(n_per, n)
            while need > 0:
                for j in neighbors_of(center, k):
                    if not taken[j]:
                        taken[j] = True
                        picked[n_picked] = j
                        n_picked += 1
                        need -= 1
                        if need == 0:
                            break
                if need > 0:
                    if k == n:
                        break  # every tile point is already taken
                    k = min(2 * k, n)
    # tiles at least n_samples big guarantee full expansion always succeeds
    assert n_picked == n_samples
    return picked, centers


def _idis_scores(positions: np.ndarray, k: int) -> np.ndarray:
    """Sparsity score per point: mean distance to the k nearest neighbors."""
    n = positions.shape[0]
    kk = min(k + 1, n)
    idx = KnnIndex(positions).query_many(positions, kk)
    d = np.linalg.norm(positions[idx] - positions[:, None, :], axis=2)
    return d[:, 1:].mean(axis=1) if kk > 1 else np.zeros(n)


def _pca_normals(positions: np.ndarray, k: int) -> np.ndarray:
    n = positions.shape[0]
    kk = min(k + 1, n)
    nbr = KnnIndex(positions).query_many(positions, kk)
    pts = positions[nbr]
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / kk
    _, vec = np.linalg.eigh(cov)
    return vec[:, :, 0]  # eigenvector of the smallest eigenvalue


def _gs_scores(positions: np.ndarray, k: int) -> np.ndarray:
    n = positions.shape[0]
    kk = min(k + 1, n)
    normals = _pca_normals(positions, k)
    nbr = KnnIndex(positions).query_many(positions, kk)
    nb_normals = normals[nbr]
    # orient neighbors toward the point's own normal before averaging
    sign = np.sign(np.einsum("nkj,nj->nk", nb_normals, normals))
    sign[sign == 0] = 1.0
    mean = (nb_normals * sign[:, :, None]).mean(axis=1)
    norm = np.linalg.norm(mean, axis=1)
    cos = np.ones(n)
    ok = norm > 1e-12
    cos[ok] = np.abs(np.einsum("nj,nj->n", normals[ok], mean[ok]) / norm[ok])
    return 1.0 - np.clip(cos, 0.0, 1.0)


def _vs_occupancy(positions, lo, ext, res_axis):
    dmax = float(ext.max())
    d = np.maximum(1, np.ceil(res_axis * ext / max(dmax, 1e-300)).astype(np.int64))
    ijk = np.clip(
        np.floor((positions - lo) / np.maximum(ext, 1e-300) * d).astype(np.int64),
        0,
        d - 1,
    )
    lin = (ijk[:, 0] * d[1] + ijk[:, 1]) * d[2] + ijk[:, 2]
    return lin


def _vs_sample(positions: np.ndarray, n_samples: int) -> np.ndarray:
    n = positions.shape[0]
    lo = positions.min(axis=0)
    ext = positions.max(axis=0) - lo

    def occupied_count(r):
        return np.unique(_vs_occupancy(positions, lo, ext, r)).size

    r = 1
    prev = 0
    while occupied_count(r) < n_samples:
        if r > 1 and occupied_count(r) == prev and r > 4 * n:
            break  # occupancy plateaued: fewer distinct positions than n_samples
        prev = occupied_count(r)
        r *= 2
    lo_r, hi_r = max(1, r // 2), r
    while lo_r < hi_r:
        mid = (lo_r + hi_r) // 2
        if occupied_count(mid) >= n_samples:
            hi_r = mid
        else:
            lo_r = mid + 1
    r = lo_r if occupied_count(lo_r) >= n_samples else r

    lin = _vs_occupancy(positions, lo, ext, r)
    order = np.argsort(lin, kind="stable")
    voxel_ids, starts = np.unique(lin[order], return_index=True)
    ends = np.append(starts[1:], n)
    snapped, counts = [], []
    for s, e in zip(starts, ends):
        pts = order[s:e]
        centroid = positions[pts].mean(axis=0)
        d2 = ((positions[pts] - centroid) ** 2).sum(axis=1)
        snapped.append(int(pts[np.lexsort((pts, d2))[0]]))
        counts.append(e - s)
    snapped = np.array(snapped, dtype=np.int64)
    counts = np.array(counts, dtype=np.int64)
    # truncate to the densest voxels, refill from unused points if short
    keep = np.lexsort((voxel_ids, -counts))[:n_samples]
    chosen = snapped[np.sort(keep)]
    if chosen.size < n_samples:
        unused = np.setdiff1d(np.arange(n), chosen)
        chosen = np.concatenate([chosen, unused[: n_samples - chosen.size]])
    return chosen


def baseline_sample(
    positions: np.ndarray,
    n_samples: int,
    method: SamplingMethod,
    seed: int,
    density_k: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """One of the five baseline samplers; returns ``(indices, centers)``.

    ``centers`` is empty for baselines (the notion only exists for URS).
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < n_samples:
        raise InsufficientPointsError(
            f"tile has {n} points, cannot sample {n_samples}"
        )
    if method == SamplingMethod.URS:
        raise InvalidArgumentError("use urs_sample for URS")
    rng = np.random.default_rng([_mask_seed(seed), 0xB5])
    if method == SamplingMethod.RS:
        idx = rng.choice(n, size=n_samples, replace=False).astype(np.int64)
    elif method == SamplingMethod.FPS:
        start = int(rng.integers(n))
        idx = kernels.farthest_point_indices(positions, n_samples, start)
    elif method == SamplingMethod.IDIS:
        scores = _idis_scores(positions, density_k)
        idx = np.lexsort((np.arange(n), -scores))[:n_samples]
    elif method == SamplingMethod.GS:
        scores = _gs_scores(positions, density_k)
        idx = np.lexsort((np.arange(n), -scores))[:n_samples]
    elif method == SamplingMethod.VS:
        idx = _vs_sample(positions, n_samples)
    else:  # pragma: no cover
        raise InvalidArgumentError(f"unknown method {method}")
    return np.asarray(idx, dtype=np.int64), np.empty(0, dtype=np.int64)


def sample_tile(
    frame,
    tiled,
    tile_id: int,
    method: SamplingMethod,
    n_samples: int,
    n_cubes: int,
    seed: int,
) -> SampledTile:
    """Sample one tile of a tiled frame, lifting indices to frame level."""
    tile_idx = tiled.tiles[tile_id]
    pos = frame.positions[tile_idx]
    if method == SamplingMethod.URS:
        local, centers = urs_sample(pos, n_samples, n_cubes, seed)
    else:
        local, centers = baseline_sample(pos, n_samples, method, seed)
    glob = tile_idx[local]
    return SampledTile(
        tile_id=tile_id,
        frame_index=frame.frame_index,
        point_indices=glob,
        centers=tile_idx[centers] if centers.size else centers,
        positions=frame.positions[glob],
        colors=frame.colors[glob].astype(np.float64),
    )


# ---------------------------------------------------------------------------
# DaCVV / IFMI
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DacvvContext:
    """Normalizers for DaCVV: max coordinate and color distance of the
    reference tile (frame t). Degenerate tiles are rejected."""

    d_max: float
    c_max: float

    def __post_init__(self):
        if not (self.d_max > 0 and self.c_max > 0):
            raise InvalidArgumentError(
                f"degenerate tile: d_max={self.d_max}, c_max={self.c_max}"
            )

    @staticmethod
    def from_tile(positions: np.ndarray, colors: np.ndarray) -> "DacvvContext":
        return DacvvContext(
            kernels.max_pair_dist(positions),
            kernels.max_pair_dist(np.asarray(colors, dtype=np.float64)),
        )


def dacvv(a: Point, b: Point, ctx: DacvvContext) -> float:
    """Normalized coordinate-plus-color dissimilarity of two points."""
    dp = np.linalg.norm(np.subtract(a.position, b.position))
    dc = np.linalg.norm(
        np.subtract(a.color, b.color).astype(np.float64)
    )
    return float(dp / ctx.d_max + dc / ctx.c_max)


def min_dacvv_per_point(
    sampled_t: SampledTile, sampled_prev: SampledTile, ctx: DacvvContext
) -> np.ndarray:
    """For each frame-t sample, its minimum DaCVV against frame-(t-1) samples."""
    if sampled_t.tile_id != sampled_prev.tile_id:
        raise InvalidArgumentError(
            f"tile ids differ: {sampled_t.tile_id} vs {sampled_prev.tile_id}"
        )
    return kernels.min_dacvv(
        sampled_t.positions,
        sampled_t.colors,
        sampled_prev.positions,
        sampled_prev.colors,
        ctx.d_max,
        ctx.c_max,
    )


def ifmi(
    sampled_t: SampledTile,
    sampled_prev: SampledTile,
    threshold: float,
    ctx: DacvvContext,
) -> float:
    """Inter-frame mapping intensity: fraction of frame-t samples whose
    nearest frame-(t-1) sample is closer than ``threshold`` in DaCVV."""
    if threshold < 0:
        raise InvalidArgumentError(f"threshold must be >= 0, got {threshold}")
    mind = min_dacvv_per_point(sampled_t, sampled_prev, ctx)
    return float((mind < threshold).mean())


def ifmi_curve(
    sampled_t: SampledTile,
    sampled_prev: SampledTile,
    thresholds,
    ctx: DacvvContext,
) -> dict[float, float]:
    """IFMI at several thresholds from a single pairwise scan."""
    mind = min_dacvv_per_point(sampled_t, sampled_prev, ctx)
    return {float(t): float((mind < t).mean()) for t in thresholds}

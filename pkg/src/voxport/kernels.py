"""Hot geometry kernels: exact grid KNN, farthest-point selection, pairwise scans.

Each public function dispatches to a numba ``@njit`` kernel or a vectorized
numpy fallback depending on :data:`voxport.backend.NUMBA_ENABLED`. Both
flavors are exact and return identical results; the benchmark in
``benchmarks/bench_backends.py`` compares their throughput.

Conventions: positions are ``(n, 3) float64`` arrays, neighbor lists are
sorted by ascending squared distance with ties broken by ascending point
index.
"""

import math

import numpy as np

from .backend import NUMBA_ENABLED

if NUMBA_ENABLED:
    from numba import njit
else:  # pragma: no cover - exercised via VOXPORT_BACKEND=numpy runs

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


# ---------------------------------------------------------------------------
# Uniform hash grid (CSR layout over cells)
# ---------------------------------------------------------------------------


def cell_linear_ids(
    positions: np.ndarray, lo: np.ndarray, cell: np.ndarray, dims: np.ndarray
) -> np.ndarray:
    """Linear cell id per point for an anisotropic grid; chunked to keep the
    transient buffers small."""
    n = positions.shape[0]
    lin = np.empty(n, dtype=np.int64)
    step = max(1, min(n, 16384))
    for s in range(0, n, step):
        block = positions[s : s + step]
        acc = None
        for ax in range(3):
            t = (block[:, ax] - lo[ax]) / cell[ax]
            i = np.clip(np.floor(t).astype(np.int64), 0, dims[ax] - 1)
            acc = i if acc is None else acc * dims[ax] + i
        lin[s : s + step] = acc
    return lin


@njit(cache=True)
def _counting_sort_numba(lin, starts, order):
    cursor = starts[:-1].copy()
    for i in range(lin.shape[0]):
        c = lin[i]
        order[cursor[c]] = i
        cursor[c] += 1


def sort_by_cell(lin: np.ndarray, n_cells: int):
    """Stable grouping of point indices by cell: returns (order, starts)."""
    counts = np.bincount(lin, minlength=n_cells)
    starts = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    order = np.empty(lin.shape[0], dtype=np.int64)
    if NUMBA_ENABLED:
        _counting_sort_numba(lin, starts, order)
    else:
        order[:] = np.argsort(lin, kind="stable")
    return order, starts


def grid_build(positions: np.ndarray, cell) -> tuple:
    """Bucket points into a uniform grid; ``cell`` is a scalar edge length or
    a per-axis 3-vector.

    Returns ``(lo, cell3, dims, order, starts)`` where ``order`` lists point
    indices grouped by cell and ``starts`` is the CSR offset array of length
    ``prod(dims) + 1``.
    """
    lo = positions.min(axis=0).astype(np.float64)
    ext = positions.max(axis=0) - lo
    cell3 = np.broadcast_to(np.asarray(cell, dtype=np.float64), (3,)).copy()
    cell3 = np.maximum(cell3, 1e-300)
    dims = np.maximum(1, np.ceil(ext / cell3).astype(np.int64))
    lin = cell_linear_ids(positions, lo, cell3, dims)
    order, starts = sort_by_cell(lin, int(dims.prod()))
    return lo, cell3, dims, order, starts


@njit(cache=True)
def _insert_candidate(best_d2, best_i, filled, k, d2, idx):
    if filled == k:
        last = k - 1
        if d2 > best_d2[last] or (d2 == best_d2[last] and idx > best_i[last]):
            return filled
    p = filled
    while p > 0 and (
        best_d2[p - 1] > d2 or (best_d2[p - 1] == d2 and best_i[p - 1] > idx)
    ):
        p -= 1
    if p >= k:
        return filled
    end = filled if filled < k else k - 1
    for m in range(end, p, -1):
        best_d2[m] = best_d2[m - 1]
        best_i[m] = best_i[m - 1]
    best_d2[p] = d2
    best_i[p] = idx
    if filled < k:
        filled += 1
    return filled


@njit(cache=True)
def _grid_query_one(pos, lo, cell, dims, order, starts, qx, qy, qz, k, out):
    best_d2 = np.full(k, np.inf)
    best_i = np.full(k, -1, dtype=np.int64)
    filled = 0

    cx = int(math.floor((qx - lo[0]) / cell[0]))
    cy = int(math.floor((qy - lo[1]) / cell[1]))
    cz = int(math.floor((qz - lo[2]) / cell[2]))
    cx = min(max(cx, 0), dims[0] - 1)
    cy = min(max(cy, 0), dims[1] - 1)
    cz = min(max(cz, 0), dims[2] - 1)

    max_ring = max(
        max(cx, dims[0] - 1 - cx),
        max(max(cy, dims[1] - 1 - cy), max(cz, dims[2] - 1 - cz)),
    )
    min_cell = min(cell[0], min(cell[1], cell[2]))

    for r in range(max_ring + 1):
        # cells at Chebyshev distance >= r are at Euclidean distance
        # >= (r-1)*min_cell from the query, so once the kth candidate beats
        # that bound no unscanned cell can contribute
        if filled == k and r > 0:
            bound = (r - 1) * min_cell
            if best_d2[k - 1] < bound * bound:
                break
        for dx in range(-r, r + 1):
            x = cx + dx
            if x < 0 or x >= dims[0]:
                continue
            on_x = abs(dx) == r
            for dy in range(-r, r + 1):
                y = cy + dy
                if y < 0 or y >= dims[1]:
                    continue
                on_y = abs(dy) == r
                if on_x or on_y:
                    zlo, zhi, zstep = -r, r, 1
                else:
                    zlo, zhi, zstep = -r, r, max(2 * r, 1)
                for dz in range(zlo, zhi + 1, zstep):
                    z = cz + dz
                    if z < 0 or z >= dims[2]:
                        continue
                    lin = (x * dims[1] + y) * dims[2] + z
                    for t in range(starts[lin], starts[lin + 1]):
                        j = order[t]
                        ddx = pos[j, 0] - qx
                        ddy = pos[j, 1] - qy
                        ddz = pos[j, 2] - qz
                        d2 = ddx * ddx + ddy * ddy + ddz * ddz
                        filled = _insert_candidate(best_d2, best_i, filled, k, d2, j)
    for t in range(k):
        out[t] = best_i[t]
    return filled


@njit(cache=True)
def _grid_query_many(pos, lo, cell, dims, order, starts, queries, k, out):
    for q in range(queries.shape[0]):
        _grid_query_one(
            pos,
            lo,
            cell,
            dims,
            order,
            starts,
            queries[q, 0],
            queries[q, 1],
            queries[q, 2],
            k,
            out[q],
        )


def grid_knn(positions, lo, cell, dims, order, starts, queries, k):
    """Exact k-NN against a prebuilt grid; numba ring-expansion search."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    cell3 = np.broadcast_to(np.asarray(cell, dtype=np.float64), (3,)).copy()
    _grid_query_many(positions, lo, cell3, dims, order, starts, queries, k, out)
    return out


# ---------------------------------------------------------------------------
# Brute-force KNN (numpy fallback and small-set path)
# ---------------------------------------------------------------------------


def brute_knn(positions: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Exact k-NN by full scan; ties broken by ascending index."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = positions.shape[0]
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    idx_row = np.arange(n)
    chunk = max(1, int(2e7) // max(n, 1))
    for s in range(0, queries.shape[0], chunk):
        q = queries[s : s + chunk]
        d2 = ((q[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        ordered = np.lexsort((np.broadcast_to(idx_row, d2.shape), d2), axis=1)
        out[s : s + chunk] = ordered[:, :k]
    return out


# ---------------------------------------------------------------------------
# Farthest-point selection
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fps_numba(pos, n_out, start):
    n = pos.shape[0]
    out = np.empty(n_out, dtype=np.int64)
    d2 = np.full(n, np.inf)
    cur = start
    out[0] = cur
    d2[cur] = -1.0
    for i in range(1, n_out):
        best = -1
        bestd = -2.0
        for j in range(n):
            if d2[j] >= 0.0:
                dx = pos[j, 0] - pos[cur, 0]
                dy = pos[j, 1] - pos[cur, 1]
                dz = pos[j, 2] - pos[cur, 2]
                dd = dx * dx + dy * dy + dz * dz
                if dd < d2[j]:
                    d2[j] = dd
            if d2[j] > bestd:
                bestd = d2[j]
                best = j
        cur = best
        out[i] = cur
        d2[cur] = -1.0
    return out


def _fps_numpy(pos, n_out, start):
    n = pos.shape[0]
    out = np.empty(n_out, dtype=np.int64)
    d2 = np.full(n, np.inf)
    cur = start
    out[0] = cur
    d2[cur] = -1.0
    for i in range(1, n_out):
        nd = ((pos - pos[cur]) ** 2).sum(axis=1)
        np.minimum(d2, nd, out=d2, where=d2 >= 0.0)
        cur = int(np.argmax(d2))
        out[i] = cur
        d2[cur] = -1.0
    return out


def farthest_point_indices(positions: np.ndarray, n_out: int, start: int) -> np.ndarray:
    """Greedy farthest-first selection of ``n_out`` distinct indices.

    Already-selected points are masked with a negative sentinel so exact
    duplicates can never be picked twice; argmax ties go to the lowest index.
    """
    if NUMBA_ENABLED:
        return _fps_numba(positions, n_out, start)
    return _fps_numpy(positions, n_out, start)


# ---------------------------------------------------------------------------
# Pairwise scans for the DaCVV / IFMI metrics
# ---------------------------------------------------------------------------


@njit(cache=True)
def _min_dacvv_numba(pos_a, col_a, pos_b, col_b, d_max, c_max):
    na = pos_a.shape[0]
    nb = pos_b.shape[0]
    out = np.empty(na)
    for i in range(na):
        best = np.inf
        for j in range(nb):
            dx = pos_a[i, 0] - pos_b[j, 0]
            dy = pos_a[i, 1] - pos_b[j, 1]
            dz = pos_a[i, 2] - pos_b[j, 2]
            cr = col_a[i, 0] - col_b[j, 0]
            cg = col_a[i, 1] - col_b[j, 1]
            cb = col_a[i, 2] - col_b[j, 2]
            v = (
                math.sqrt(dx * dx + dy * dy + dz * dz) / d_max
                + math.sqrt(cr * cr + cg * cg + cb * cb) / c_max
            )
            if v < best:
                best = v
        out[i] = best
    return out


def _min_dacvv_numpy(pos_a, col_a, pos_b, col_b, d_max, c_max):
    na = pos_a.shape[0]
    out = np.empty(na)
    chunk = max(1, int(2e7) // max(pos_b.shape[0], 1))
    for s in range(0, na, chunk):
        dp = np.sqrt(
            ((pos_a[s : s + chunk, None, :] - pos_b[None, :, :]) ** 2).sum(axis=2)
        )
        dc = np.sqrt(
            ((col_a[s : s + chunk, None, :] - col_b[None, :, :]) ** 2).sum(axis=2)
        )
        out[s : s + chunk] = (dp / d_max + dc / c_max).min(axis=1)
    return out


def min_dacvv(pos_a, col_a, pos_b, col_b, d_max, c_max) -> np.ndarray:
    """Per-row minimum DaCVV of set ``a`` against set ``b``."""
    if NUMBA_ENABLED:
        return _min_dacvv_numba(pos_a, col_a, pos_b, col_b, d_max, c_max)
    return _min_dacvv_numpy(pos_a, col_a, pos_b, col_b, d_max, c_max)


@njit(cache=True)
def _max_pair_dist_numba(x):
    n = x.shape[0]
    d = x.shape[1]
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for c in range(d):
                diff = x[i, c] - x[j, c]
                acc += diff * diff
            if acc > best:
                best = acc
    return math.sqrt(best)


def _max_pair_dist_numpy(x):
    n = x.shape[0]
    best = 0.0
    chunk = max(1, int(2e7) // max(n, 1))
    for s in range(0, n, chunk):
        d2 = ((x[s : s + chunk, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        m = d2.max()
        if m > best:
            best = m
    return math.sqrt(best)


def max_pair_dist(x: np.ndarray) -> float:
    """Exact maximum pairwise Euclidean distance within a point set.

    Large sets are reduced to their convex hull vertices first (the diameter
    is always attained there); degenerate hulls fall back to the full scan.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 2:
        return 0.0
    if x.shape[0] > 4096:
        try:
            from scipy.spatial import ConvexHull

            hull = x[ConvexHull(x).vertices]
            x = np.ascontiguousarray(hull)
        except Exception:
            pass  # coplanar or tiny-extent sets: pay the quadratic scan
    if NUMBA_ENABLED:
        return float(_max_pair_dist_numba(x))
    return float(_max_pair_dist_numpy(x))

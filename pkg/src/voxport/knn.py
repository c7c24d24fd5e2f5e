"""Exact k-nearest-neighbor search over a uniform hash grid.

Results are identical to a brute-force scan: neighbors sorted by ascending
Euclidean distance, ties broken by ascending point index. Point sets smaller
than ``BRUTE_FORCE_LIMIT`` skip grid construction entirely.
"""

import numpy as np

from . import kernels
from .backend import NUMBA_ENABLED
from .errors import InvalidArgumentError

BRUTE_FORCE_LIMIT = 64


class KnnIndex:
    """Immutable exact-KNN index over a fixed ``(n, 3)`` position array.

    Cell edge is ``bbox diagonal / cbrt(n)``; a ring-expansion search keeps
    the grid path exact. Under the numpy backend all queries fall back to
    the vectorized brute-force scan.
    """

    def __init__(self, positions: np.ndarray):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidArgumentError(
                f"positions must be (n, 3), got {self.positions.shape}"
            )
        n = self.positions.shape[0]
        self._grid = None
        if NUMBA_ENABLED and n >= BRUTE_FORCE_LIMIT:
            lo = self.positions.min(axis=0)
            hi = self.positions.max(axis=0)
            diag = float(np.linalg.norm(hi - lo))
            if diag > 0:
                cell = diag / max(1.0, np.cbrt(n))
                self._grid = kernels.grid_build(self.positions, cell)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def query(self, query, k: int) -> np.ndarray:
        """Indices of the ``k`` nearest points to one query position."""
        return self.query_many(np.asarray(query, dtype=np.float64)[None, :], k)[0]

    def query_many(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Row-wise KNN for an ``(m, 3)`` query array; returns ``(m, k)``."""
        n = len(self)
        if k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {k}")
        if k > n:
            raise InvalidArgumentError(f"k={k} exceeds indexed point count {n}")
        queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if self._grid is not None:
            lo, cell, dims, order, starts = self._grid
            return kernels.grid_knn(
                self.positions, lo, cell, dims, order, starts, queries, k
            )
        return kernels.brute_knn(self.positions, queries, k)


def knn(index: KnnIndex, query, k: int) -> np.ndarray:
    """Functional form of :meth:`KnnIndex.query`."""
    return index.query(query, k)

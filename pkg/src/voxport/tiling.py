"""Sequence-stable spatial tiling.

A frame is cut into ``gx * gy * gz`` axis-aligned cells of a bounding box
shared by the whole sequence, so tile j of frame t and tile j of frame t-1
cover the same region of space. Cells are half-open with the max faces
closed, which makes the partition exhaustive and deterministic.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, OutOfBoundsError, ParseError
from .frames import PointCloudFrame


@dataclass(frozen=True)
class BBox:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise InvalidArgumentError(f"bbox has hi < lo: {self}")

    @staticmethod
    def of_points(positions: np.ndarray) -> "BBox":
        return BBox(tuple(positions.min(axis=0)), tuple(positions.max(axis=0)))

    @staticmethod
    def union(boxes) -> "BBox":
        lo = np.min([b.lo for b in boxes], axis=0)
        hi = np.max([b.hi for b in boxes], axis=0)
        return BBox(tuple(lo), tuple(hi))

    def contains(self, positions: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return ((positions >= lo) & (positions <= hi)).all(axis=1)

    def diagonal(self) -> float:
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))


@dataclass
class TiledFrame:
    frame_index: int
    grid: tuple[int, int, int]
    global_bbox: BBox
    tiles: list[np.ndarray]

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)


def cell_of(positions: np.ndarray, grid, bbox: BBox) -> np.ndarray:
    """Cell index per point, a pure function of position, grid, and bbox."""
    lo = np.asarray(bbox.lo)
    ext = np.asarray(bbox.hi) - lo
    dims = np.asarray(grid, dtype=np.int64)
    # degenerate extents collapse to a single cell along that axis
    safe = np.where(ext > 0, ext, 1.0)
    ijk = np.floor((positions - lo) / safe * dims).astype(np.int64)
    ijk = np.clip(ijk, 0, dims - 1)
    return (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]


def tile_frame(frame: PointCloudFrame, grid, global_bbox: BBox) -> TiledFrame:
    """Partition a frame's points into grid cells of the shared bbox."""
    grid = tuple(int(g) for g in grid)
    if any(g < 1 for g in grid):
        raise InvalidArgumentError(f"grid components must be >= 1, got {grid}")
    inside = global_bbox.contains(frame.positions)
    if not inside.all():
        bad = np.flatnonzero(~inside)
        raise OutOfBoundsError(
            f"frame {frame.frame_index}: {bad.size} points outside the global bbox "
            f"(first indices {bad[:5].tolist()})"
        )
    m = grid[0] * grid[1] * grid[2]
    cells = cell_of(frame.positions, grid, global_bbox)
    order = np.argsort(cells, kind="stable")
    bounds = np.searchsorted(cells[order], np.arange(m + 1))
    tiles = [order[bounds[j] : bounds[j + 1]] for j in range(m)]
    return TiledFrame(frame.frame_index, grid, global_bbox, tiles)


@dataclass
class SequenceManifest:
    """Frame file list plus the shared tiling geometry of a sequence."""

    frame_paths: list[str]
    global_bbox: BBox
    grid: tuple[int, int, int]

    def save(self, path) -> None:
        path = Path(path)
        lines = [f"frames = {len(self.frame_paths)}"]
        lines += [f"frame.{i} = {p}" for i, p in enumerate(self.frame_paths)]
        bbox = " ".join(repr(float(v)) for v in (*self.global_bbox.lo, *self.global_bbox.hi))
        lines.append(f"bbox = {bbox}")
        lines.append("grid = " + " ".join(str(g) for g in self.grid))
        path.write_text("\n".join(lines) + "\n", encoding="ascii")

    @staticmethod
    def load(path) -> "SequenceManifest":
        path = Path(path)
        kv = {}
        for ln, raw in enumerate(path.read_text(encoding="ascii").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path.name}:{ln}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        try:
            n = int(kv["frames"])
            paths = [kv[f"frame.{i}"] for i in range(n)]
            b = [float(v) for v in kv["bbox"].split()]
            grid = tuple(int(v) for v in kv["grid"].split())
        except KeyError as e:
            raise ParseError(f"{path.name}: missing manifest key {e}") from None
        if len(b) != 6:
            raise ParseError(f"{path.name}: bbox needs 6 floats, got {len(b)}")
        if len(grid) != 3:
            raise ParseError(f"{path.name}: grid needs 3 ints, got {len(grid)}")
        return SequenceManifest(paths, BBox(tuple(b[:3]), tuple(b[3:])), grid)

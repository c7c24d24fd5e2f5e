"""Accuracy metrics: OA, precision, recall, point- and tile-level MIoU.

Class 1 (in FoV) is the positive class. MIoU averages the IoU of both
classes. Degenerate denominators yield ``None`` (absent), never NaN and
never a silent 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalReport:
    oa: float | None
    precision: float | None
    recall: float | None
    point_miou: float | None
    tile_miou: float | None = None
    excluded_tiles: int = 0

    def as_row(self) -> list[str]:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [
            fmt(self.oa),
            fmt(self.precision),
            fmt(self.recall),
            fmt(self.point_miou),
            fmt(self.tile_miou),
        ]


def confusion(pred, gt) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(
            f"label lengths differ: pred {pred.shape}, gt {gt.shape}"
        )
    return ConfusionCounts(
        tp=int(np.sum(pred & gt)),
        fp=int(np.sum(pred & ~gt)),
        tn=int(np.sum(~pred & ~gt)),
        fn=int(np.sum(~pred & gt)),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def miou_of(c: ConfusionCounts) -> float | None:
    """Mean IoU over the two classes; a class absent from both prediction
    and ground truth (zero union) is excluded from the mean."""
    ious = [
        r
        for r in (
            _ratio(c.tp, c.tp + c.fp + c.fn),
            _ratio(c.tn, c.tn + c.fn + c.fp),
        )
        if r is not None
    ]
    return sum(ious) / len(ious) if ious else None


def point_metrics(c: ConfusionCounts):
    """Returns (oa, precision, recall, point_miou); absent values are None."""
    if c.total <= 0:
        raise InvalidArgumentError("empty confusion counts")
    oa = (c.tp + c.tn) / c.total
    return (
        oa,
        _ratio(c.tp, c.tp + c.fp),
        _ratio(c.tp, c.tp + c.fn),
        miou_of(c),
    )


def tile_labels(labels, tiling, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-tile binary labels: 1 iff the tile's in-FoV point fraction is at
    least tau. Returns (labels, valid_mask); empty tiles are invalid."""
    labels = np.asarray(labels)
    out = np.zeros(tiling.n_tiles, dtype=np.uint8)
    valid = np.zeros(tiling.n_tiles, dtype=bool)
    for j, idx in enumerate(tiling.tiles):
        if idx.size == 0:
            continue
        valid[j] = True
        out[j] = labels[idx].mean() >= tau
    return out, valid


def tile_metrics(pred, gt, tiling, tau: float) -> tuple[float | None, int]:
    """Tile-level MIoU at threshold tau; returns (miou, excluded_tiles)."""
    if not (0 < tau <= 1):
        raise InvalidArgumentError(f"tau must lie in (0, 1], got {tau}")
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    n = sum(len(t) for t in tiling.tiles)
    if len(pred) != n or len(gt) != n:
        raise InvalidArgumentError(
            f"labels must cover all {n} tiled points, got {len(pred)}/{len(gt)}"
        )
    p_lab, valid = tile_labels(pred, tiling, tau)
    g_lab, _ = tile_labels(gt, tiling, tau)
    excluded = int((~valid).sum())
    if not valid.any():
        return None, excluded
    return miou_of(confusion(p_lab[valid], g_lab[valid])), excluded


def full_report(pred, gt, tiling=None, tau: float = 0.1) -> EvalReport:
    c = confusion(pred, gt)
    oa, prec, rec, pm = point_metrics(c)
    tm, excl = (None, 0)
    if tiling is not None:
        tm, excl = tile_metrics(pred, gt, tiling, tau)
    return EvalReport(oa, prec, rec, pm, tm, excl)

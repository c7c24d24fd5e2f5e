"""Synthetic scene generation: desk-scale stand-in for captured sequences.

A scene is a room-sized box holding colored static blobs, a bright moving
object, and background dust with a smooth color field. Viewers sit on a
slowly drifting arc facing the moving object, so saliency (color + motion)
and trajectories are both informative about the viewport.

Output directory layout:

    frames/frame_0000.ply ...   binary little-endian frames
    trajectory.csv              frame,user,X,Y,Z,alpha,beta,gamma
    seq.manifest                frame list, global bbox, tile grid
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frames import PointCloudFrame
from .ply import save_ply
from .tiling import BBox, SequenceManifest
from .trajectory import HeadState, save_trajectories


@dataclass
class SyntheticSceneSpec:
    n_frames: int = 10
    n_static: int = 3
    points_per_object: int = 1500
    background_points: int = 18000
    n_users: int = 8
    viewer_mode: str = "circle"  # circle arc or straight line
    noise_level: float = 0.0
    velocity: tuple = (0.18, 0.0, 0.12)
    grid: tuple = (2, 3, 2)
    seed: int = 7

    @property
    def bbox(self) -> BBox:
        return BBox((0.0, 0.0, 0.0), (4.0, 3.0, 4.0))


_STATIC_COLORS = np.array(
    [[70, 110, 190], [90, 170, 90], [190, 170, 70], [150, 90, 170], [90, 170, 170]],
    dtype=np.float64,
)
MOVING_COLOR = np.array([230, 40, 30], dtype=np.float64)


def _f32(pos):
    return pos.astype(np.float32).astype(np.float64)


def moving_center(spec: SyntheticSceneSpec, t: int) -> np.ndarray:
    start = np.array([1.0, 1.5, 1.2])
    c = start + np.asarray(spec.velocity, dtype=np.float64) * t
    lo = np.asarray(spec.bbox.lo) + 0.45
    hi = np.asarray(spec.bbox.hi) - 0.45
    return np.clip(c, lo, hi)


def viewer_state(
    spec: SyntheticSceneSpec, user: int, t: int, rng: np.random.Generator
) -> HeadState:
    """Audience viewpoint: an arc around the moving object, drifting with t."""
    target = moving_center(spec, t)
    if spec.viewer_mode == "line":
        base = np.array([0.4, 1.6, 0.4]) + 0.25 * t * np.array([1.0, 0.0, 0.3])
        pos = base + user * np.array([0.25, 0.05, 0.0])
    else:
        arc = np.radians(140.0)
        phase = -np.pi / 3 + np.radians(6.0) * t
        offset = arc * (user / max(spec.n_users - 1, 1) - 0.5)
        angle = phase + offset
        radius = 2.4
        pos = target + radius * np.array([np.cos(angle), 0.0, np.sin(angle)])
        pos[1] = 1.5 + 0.1 * (user % 3)
    if spec.noise_level > 0:
        pos = pos + rng.normal(0.0, spec.noise_level, size=3)
    fwd = target - pos
    fwd = fwd / np.linalg.norm(fwd)
    alpha = float(np.degrees(-np.arcsin(fwd[1])))
    beta = float(np.degrees(np.arctan2(fwd[0], fwd[2])))
    if spec.noise_level > 0:
        alpha += float(rng.normal(0.0, spec.noise_level * 20))
        beta += float(rng.normal(0.0, spec.noise_level * 20))
    return HeadState(*pos, alpha, beta, 0.0)


def build_scene_frames(spec: SyntheticSceneSpec) -> list[PointCloudFrame]:
    rng = np.random.default_rng(spec.seed)
    lo = np.asarray(spec.bbox.lo)
    hi = np.asarray(spec.bbox.hi)

    bg_pos = rng.uniform(lo + 1e-3, hi - 1e-3, size=(spec.background_points, 3))
    # smooth color field plus fine noise keeps every tile's color spread positive
    bg_col = 40 + 140 * (bg_pos - lo) / (hi - lo) + rng.normal(0, 12, bg_pos.shape)

    statics = []
    for i in range(spec.n_static):
        center = rng.uniform(lo + 0.6, hi - 0.6)
        pts = center + rng.normal(0.0, 0.22, size=(spec.points_per_object, 3))
        col = _STATIC_COLORS[i % len(_STATIC_COLORS)] + rng.normal(
            0, 10, size=(spec.points_per_object, 3)
        )
        statics.append((pts, col))

    mv_local = rng.normal(0.0, 0.3, size=(spec.points_per_object, 3))
    mv_col = MOVING_COLOR + rng.normal(0, 8, size=(spec.points_per_object, 3))

    n_total = spec.background_points + (spec.n_static + 1) * spec.points_per_object
    perm = rng.permutation(n_total)

    frames = []
    for t in range(spec.n_frames):
        pos = np.vstack(
            [bg_pos] + [p for p, _ in statics] + [moving_center(spec, t) + mv_local]
        )
        col = np.vstack([bg_col] + [c for _, c in statics] + [mv_col])
        pos = np.clip(pos, lo, hi)
        col = np.clip(col, 0, 255)
        frames.append(
            PointCloudFrame(
                t, _f32(pos[perm]), col[perm].round().astype(np.uint8)
            )
        )
    return frames


def build_trajectories(spec: SyntheticSceneSpec) -> dict[int, list[HeadState]]:
    per_user = {}
    for user in range(spec.n_users):
        rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, 0x7A, user])
        per_user[user] = [
            viewer_state(spec, user, t, rng) for t in range(spec.n_frames)
        ]
    return per_user


def gen_scene(spec: SyntheticSceneSpec, out_dir) -> Path:
    """Write frames, trajectories, and the sequence manifest; returns the dir."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    frames = build_scene_frames(spec)
    paths = []
    for frame in frames:
        rel = f"frames/frame_{frame.frame_index:04d}.ply"
        save_ply(frame, out / rel, binary=True)
        paths.append(rel)
    save_trajectories(out / "trajectory.csv", build_trajectories(spec))
    SequenceManifest(paths, spec.bbox, spec.grid).save(out / "seq.manifest")
    return out

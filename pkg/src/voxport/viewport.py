"""Viewport geometry and FoV labeling.

A head state maps to an angular frustum: rotation Rz(gamma) Ry(beta) Rx(alpha)
(intrinsic, right-handed, degrees) applied to the canonical basis, forward
along +Z. A point is inside the FoV iff its forward depth is at least
``near`` and its horizontal and vertical bearing angles are within the
half-angles (closed boundary).

Ground truth aggregates many users: a point is in-FoV when at least
``freq_threshold`` users see it in that frame.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .errors import InvalidArgumentError, ParseError
from .saliency import FeatureMap
from .trajectory import HeadState

WHITE = np.array([255, 255, 255], dtype=np.uint8)
BLACK = np.array([0, 0, 0], dtype=np.uint8)


@dataclass(frozen=True)
class FovParams:
    h_half_deg: float = 55.0
    v_half_deg: float = 55.0
    near: float = 0.05

    def __post_init__(self):
        if not (0 < self.h_half_deg < 90 and 0 < self.v_half_deg < 90):
            raise InvalidArgumentError(
                f"half-angles must lie in (0, 90): {self.h_half_deg}, {self.v_half_deg}"
            )
        if self.near <= 0:
            raise InvalidArgumentError(f"near must be positive, got {self.near}")


@dataclass(frozen=True)
class Frustum:
    apex: np.ndarray
    forward: np.ndarray
    right: np.ndarray
    up: np.ndarray
    fov: FovParams

    def __post_init__(self):
        basis = np.stack([self.right, self.up, self.forward])
        if not np.allclose(basis @ basis.T, np.eye(3), atol=1e-9):
            raise InvalidArgumentError("frustum basis is not orthonormal")


def rotation_matrix(alpha_deg: float, beta_deg: float, gamma_deg: float) -> np.ndarray:
    """Rz(gamma) @ Ry(beta) @ Rx(alpha), angles in degrees."""
    a, b, g = np.radians([alpha_deg, beta_deg, gamma_deg])
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return rz @ ry @ rx


def head_state_to_frustum(state: HeadState, fov: FovParams) -> Frustum:
    r = rotation_matrix(state.alpha, state.beta, state.gamma)
    return Frustum(
        apex=state.position,
        forward=r @ np.array([0.0, 0.0, 1.0]),
        right=r @ np.array([1.0, 0.0, 0.0]),
        up=r @ np.array([0.0, 1.0, 0.0]),
        fov=fov,
    )


def points_in_fov(positions: np.ndarray, fr: Frustum) -> np.ndarray:
    """Boolean in-FoV mask for an (n, 3) position array."""
    v = positions - fr.apex
    depth = v @ fr.forward
    h_angle = np.degrees(np.arctan2(np.abs(v @ fr.right), depth))
    v_angle = np.degrees(np.arctan2(np.abs(v @ fr.up), depth))
    return (
        (depth >= fr.fov.near)
        & (h_angle <= fr.fov.h_half_deg)
        & (v_angle <= fr.fov.v_half_deg)
    )


@dataclass
class FovLabels:
    frame_index: int
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)

    def __len__(self) -> int:
        return self.labels.shape[0]


def classify_in_fov(frame, fr: Frustum) -> FovLabels:
    return FovLabels(frame.frame_index, points_in_fov(frame.positions, fr))


def render_lstm_feature(
    sampled, labels: FovLabels, params: ParamStore
) -> FeatureMap:
    """Trajectory branch features: sampled points recolored white (in FoV)
    or black, then embedded to the common fusion width."""
    if len(labels) <= sampled.point_indices.max():
        raise InvalidArgumentError(
            f"labels cover {len(labels)} points but sampled indices reach "
            f"{int(sampled.point_indices.max())}"
        )
    lab = labels.labels[sampled.point_indices]
    colors = np.where(lab[:, None] > 0, WHITE, BLACK).astype(np.float64)
    raw = np.concatenate([sampled.positions, colors / 255.0], axis=1)
    h = ad.dense(
        ad.Tensor(raw), params["fl.init.w"], params["fl.init.b"]
    )
    out = ad.dense(h, params["fl.mix.w"], params["fl.mix.b"], "relu")
    return FeatureMap("F_L", out)


def init_lstm_feature_params(store: ParamStore, width: int, rng) -> None:
    store.dense_init("fl.init", 6, width, rng)
    store.dense_init("fl.mix", width, width, rng)


def build_ground_truth(
    frame, user_states: list[HeadState], fov: FovParams, freq_threshold: int = 5
) -> FovLabels:
    """Label 1 iff at least ``freq_threshold`` users see the point."""
    if len(user_states) < 1:
        raise InvalidArgumentError("need at least one user state")
    freq = view_frequency(frame.positions, user_states, fov)
    return FovLabels(frame.frame_index, freq >= freq_threshold)


def view_frequency(
    positions: np.ndarray, user_states: list[HeadState], fov: FovParams
) -> np.ndarray:
    """How many users' frusta contain each point."""
    freq = np.zeros(positions.shape[0], dtype=np.int64)
    for state in user_states:
        freq += points_in_fov(positions, head_state_to_frustum(state, fov))
    return freq


def overlap_coverage(
    frames: list,
    states_per_frame: list[list[HeadState]],
    fov: FovParams,
    n_draws: int = 20,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Viewed-frequency calibration table.

    For randomly drawn (frame, user) pairs, computes the fraction of the
    user's in-viewport points whose overall viewed frequency is at least f,
    averaged over draws, for every f in 1..n_users.
    """
    n_users = min(len(s) for s in states_per_frame)
    if n_users < 4:
        raise InvalidArgumentError(f"need at least 4 users, got {n_users}")
    rng = np.random.default_rng(seed)
    sums = np.zeros(n_users)
    counts = np.zeros(n_users)
    for _ in range(n_draws):
        fi = int(rng.integers(len(frames)))
        ui = int(rng.integers(n_users))
        frame = frames[fi]
        states = states_per_frame[fi]
        freq = view_frequency(frame.positions, states, fov)
        mask = points_in_fov(
            frame.positions, head_state_to_frustum(states[ui], fov)
        )
        if not mask.any():
            continue
        in_view = freq[mask]
        for f in range(1, n_users + 1):
            sums[f - 1] += (in_view >= f).mean()
            counts[f - 1] += 1
    return [
        (f, float(sums[f - 1] / counts[f - 1]) if counts[f - 1] else 0.0)
        for f in range(1, n_users + 1)
    ]


# ---------------------------------------------------------------------------
# Labels CSV
# ---------------------------------------------------------------------------

_HEADER = ["frame", "point_index", "label"]


def save_labels(path, labels_per_frame: list[FovLabels]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_HEADER)
        for fl in labels_per_frame:
            for i, v in enumerate(fl.labels):
                writer.writerow([fl.frame_index, i, int(v)])


def load_labels(path) -> dict[int, np.ndarray]:
    path = Path(path)
    per_frame: dict[int, dict[int, int]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != _HEADER:
            raise ParseError(f"{path.name}: expected header {','.join(_HEADER)}")
        for row in reader:
            per_frame.setdefault(int(row[0]), {})[int(row[1])] = int(row[2])
    out = {}
    for fi, d in per_frame.items():
        arr = np.zeros(max(d) + 1, dtype=np.uint8)
        for i, v in d.items():
            arr[i] = v
        out[fi] = arr
    return out

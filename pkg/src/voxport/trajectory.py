"""LSTM forecasting of 6-DoF head states.

A head state is (X, Y, Z, alpha, beta, gamma) with Euler angles in degrees
wrapped to (-180, 180]. The single-layer LSTM consumes z-score-normalized
histories (statistics from the history itself, variance floored) and a
dense readout maps the final hidden state back to a 6-vector. Training
minimizes a wrap-aware MSE: angle errors are wrapped differences in degrees
before normalization.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import InvalidArgumentError

ANGLE_SLOTS = np.array([3, 4, 5])
VAR_FLOOR = 1e-6


def wrap_deg(a):
    """Wrap degrees to (-180, 180]."""
    return -(np.mod(-np.asarray(a, dtype=np.float64) + 180.0, 360.0) - 180.0)


@dataclass(frozen=True)
class HeadState:
    """6-DoF pose: position plus Euler angles in degrees."""

    x: float
    y: float
    z: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        vals = self.to_array()
        if not np.isfinite(vals).all():
            raise InvalidArgumentError(f"non-finite head state {vals}")
        for name, v in zip(("alpha", "beta", "gamma"), wrap_deg(vals[3:])):
            object.__setattr__(self, name, float(v))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.alpha, self.beta, self.gamma])

    @staticmethod
    def from_array(a) -> "HeadState":
        return HeadState(*(float(v) for v in a))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass
class TrajectoryModel:
    """LSTM gate parameters plus readout, with its size hyperparameters."""

    params: ParamStore
    hidden: int = 64
    window: int = 16


def init_trajectory_params(hidden: int, rng) -> ParamStore:
    store = ParamStore()
    for gate in ("f", "i", "o", "c"):
        store.add(f"lstm.w_{gate}", ad.glorot_uniform((hidden + 6, hidden), rng))
        store.add(f"lstm.b_{gate}", np.zeros(hidden))
    store.dense_init("readout", hidden, 6, rng)
    return store


def lstm_cell(
    h: Tensor, c: Tensor, x: Tensor, params: ParamStore
) -> tuple[Tensor, Tensor]:
    """One gated update; ``h``, ``c`` are (B, H), ``x`` is (B, 6)."""
    if h.data.shape != c.data.shape or h.data.shape[0] != x.data.shape[0]:
        from .errors import ShapeError

        raise ShapeError(
            f"state shapes disagree: h {h.data.shape}, c {c.data.shape}, "
            f"x {x.data.shape}"
        )
    z = ad.concat([h, x], axis=1)
    f = ad.dense(z, params["lstm.w_f"], params["lstm.b_f"], "sigmoid")
    i = ad.dense(z, params["lstm.w_i"], params["lstm.b_i"], "sigmoid")
    o = ad.dense(z, params["lstm.w_o"], params["lstm.b_o"], "sigmoid")
    c_tilde = ad.dense(z, params["lstm.w_c"], params["lstm.b_c"], "tanh")
    c_new = ad.add(ad.mul(f, c), ad.mul(i, c_tilde))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _norm_stats(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window channel mean and floored standard deviation.

    ``windows`` is (B, T, 6); returns (B, 6) mu and sigma.
    """
    mu = windows.mean(axis=1)
    sigma = np.sqrt(np.maximum(windows.var(axis=1), VAR_FLOOR))
    return mu, sigma


def _rollout(windows_norm: np.ndarray, params: ParamStore, hidden: int) -> Tensor:
    """Run the cell over (B, T, 6) normalized rows; returns readout (B, 6)."""
    b = windows_norm.shape[0]
    h = Tensor(np.zeros((b, hidden)))
    c = Tensor(np.zeros((b, hidden)))
    for t in range(windows_norm.shape[1]):
        h, c = lstm_cell(h, c, Tensor(windows_norm[:, t, :]), params)
    return ad.dense(h, params["readout.w"], params["readout.b"])


def predict_head_state(history: list[HeadState], model: TrajectoryModel) -> HeadState:
    """Forecast the next head state from a normalized history."""
    if len(history) == 0:
        raise InvalidArgumentError("history is empty")
    rows = np.stack([s.to_array() for s in history])[None, :, :]
    mu, sigma = _norm_stats(rows)
    out = _rollout((rows - mu[:, None, :]) / sigma[:, None, :], model.params, model.hidden)
    pred = mu[0] + sigma[0] * out.data[0]
    pred[ANGLE_SLOTS] = wrap_deg(pred[ANGLE_SLOTS])
    return HeadState.from_array(pred)


def _windowed(sequences: list[np.ndarray], w: int):
    inputs, targets = [], []
    for seq in sequences:
        if seq.shape[0] <= w:
            raise InvalidArgumentError(
                f"sequence length {seq.shape[0]} must exceed window {w}"
            )
        for s in range(seq.shape[0] - w):
            inputs.append(seq[s : s + w])
            targets.append(seq[s + w])
    return np.stack(inputs), np.stack(targets)


def _window_loss(
    windows: np.ndarray, targets: np.ndarray, params: ParamStore, hidden: int
) -> Tensor:
    """Wrap-aware MSE on normalized 6-vectors for a window batch."""
    mu, sigma = _norm_stats(windows)
    out = _rollout((windows - mu[:, None, :]) / sigma[:, None, :], params, hidden)
    target_norm = (targets - mu) / sigma
    diff = out - Tensor(target_norm)
    pos_err = ad.gather_cols(diff, np.array([0, 1, 2]))
    ang_norm = ad.gather_cols(diff, ANGLE_SLOTS)
    sig_ang = sigma[:, ANGLE_SLOTS]
    ang_err = ad.mul(
        ad.wrap_degrees(ad.mul(ang_norm, Tensor(sig_ang))), Tensor(1.0 / sig_ang)
    )
    err = ad.concat([pos_err, ang_err], axis=1)
    return ad.reduce_mean(ad.mul(err, err))


def train_trajectory(
    sequences: list[list[HeadState]],
    window: int = 16,
    hidden: int = 64,
    steps: int = 300,
    lr: float = 1e-2,
    seed: int = 0,
    batch: int = 256,
) -> tuple[TrajectoryModel, float]:
    """Train on sliding windows; returns the model and the final loss."""
    arrays = [np.stack([s.to_array() for s in seq]) for seq in sequences]
    inputs, targets = _windowed(arrays, window)
    params = init_trajectory_params(hidden, np.random.default_rng(seed))
    order = np.random.default_rng(seed + 1).permutation(inputs.shape[0])
    n = inputs.shape[0]
    last = np.inf
    for step in range(steps):
        if n <= batch:
            sel = slice(None)
        else:
            at = (step * batch) % n
            sel = order[at : at + batch]
            if isinstance(sel, np.ndarray) and sel.size < batch:
                sel = np.concatenate([sel, order[: batch - sel.size]])
        params.zero_grads()
        with ad.Tape() as tape:
            loss = _window_loss(inputs[sel], targets[sel], params, hidden)
        ad.backward(tape, loss)
        ad.adam_step(params, lr=lr)
        last = loss.item()
    return TrajectoryModel(params, hidden, window), last


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

_HEADER = ["frame", "user", "X", "Y", "Z", "alpha", "beta", "gamma"]


def save_trajectories(path, per_user: dict[int, list[HeadState]]) -> None:
    """Write `frame,user,X,Y,Z,alpha,beta,gamma` rows, degrees."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_HEADER)
        n_frames = max(len(v) for v in per_user.values())
        for frame in range(n_frames):
            for user in sorted(per_user):
                states = per_user[user]
                if frame < len(states):
                    writer.writerow(
                        [frame, user]
                        + [repr(float(v)) for v in states[frame].to_array()]
                    )


def load_trajectories(path) -> dict[int, list[HeadState]]:
    path = Path(path)
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != _HEADER:
            raise InvalidArgumentError(
                f"{path.name}: expected header {','.join(_HEADER)}"
            )
        for r in reader:
            rows.append((int(r[0]), int(r[1]), [float(v) for v in r[2:8]]))
    rows.sort(key=lambda r: (r[0], r[1]))
    out: dict[int, list[HeadState]] = {}
    for _, user, vals in rows:
        out.setdefault(user, []).append(HeadState.from_array(vals))
    return out

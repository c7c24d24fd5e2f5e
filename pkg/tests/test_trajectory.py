"""LSTM head-state model: cell semantics, training, CSV round trips."""

import numpy as np
import pytest

from voxport import autodiff as ad
from voxport import trajectory as tj
from voxport.autodiff import ParamStore, Tensor
from voxport.errors import InvalidArgumentError


def circle_sequence(n, phase=0.0, radius=1.0, steps_per_rev=64, center=(0, 0, 0)):
    """Viewer on a circle in the XZ plane, facing the center."""
    states = []
    for i in range(n):
        t = phase + 2 * np.pi * i / steps_per_rev
        pos = np.array(center) + radius * np.array([np.cos(t), 0.0, np.sin(t)])
        fwd = np.array(center) - pos
        fwd = fwd / np.linalg.norm(fwd)
        alpha = float(np.degrees(-np.arcsin(fwd[1])))
        beta = float(np.degrees(np.arctan2(fwd[0], fwd[2])))
        states.append(tj.HeadState(*pos, alpha, beta, 0.0))
    return states


def zero_model(hidden=8):
    store = ParamStore()
    for gate in ("f", "i", "o", "c"):
        store.add(f"lstm.w_{gate}", np.zeros((hidden + 6, hidden)))
        store.add(f"lstm.b_{gate}", np.zeros(hidden))
    store.add("readout.w", np.zeros((hidden, 6)))
    store.add("readout.b", np.zeros(6))
    return tj.TrajectoryModel(store, hidden, 4)


# ---------------------------------------------------------------------------
# HeadState
# ---------------------------------------------------------------------------


def test_head_state_wraps_angles():
    s = tj.HeadState(0, 0, 0, 270.0, -180.0, 540.0)
    assert s.alpha == -90.0
    assert s.beta == 180.0
    assert s.gamma == 180.0


def test_head_state_wrap_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(50):
        vals = rng.uniform(-720, 720, size=6)
        once = tj.HeadState.from_array(vals)
        twice = tj.HeadState.from_array(once.to_array())
        assert np.allclose(once.to_array(), twice.to_array())
        assert all(-180 < a <= 180 for a in once.to_array()[3:])


def test_head_state_rejects_nan():
    with pytest.raises(InvalidArgumentError):
        tj.HeadState(0, 0, np.nan, 0, 0, 0)


# ---------------------------------------------------------------------------
# Cell
# ---------------------------------------------------------------------------


def test_cell_zero_params_zero_state():
    model = zero_model()
    h = Tensor(np.zeros((1, 8)))
    c = Tensor(np.zeros((1, 8)))
    x = Tensor(np.random.default_rng(1).normal(size=(1, 6)))
    h2, c2 = tj.lstm_cell(h, c, x, model.params)
    # sigmoid(0)=0.5 gates, tanh(0)=0 candidate: state stays exactly zero
    assert np.array_equal(c2.data, np.zeros((1, 8)))
    assert np.array_equal(h2.data, np.zeros((1, 8)))


def test_cell_saturated_gates_keep_memory():
    model = zero_model()
    model.params["lstm.b_f"].data[...] = 100.0  # forget gate -> 1
    model.params["lstm.b_i"].data[...] = -100.0  # input gate -> 0
    c0 = np.random.default_rng(2).normal(size=(1, 8))
    h2, c2 = tj.lstm_cell(
        Tensor(np.zeros((1, 8))),
        Tensor(c0),
        Tensor(np.random.default_rng(3).normal(size=(1, 6))),
        model.params,
    )
    assert np.allclose(c2.data, c0, atol=1e-12)


def test_cell_matches_per_gate_oracle():
    rng = np.random.default_rng(4)
    store = tj.init_trajectory_params(8, rng)
    h0, c0 = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    x0 = rng.normal(size=(1, 6))
    h2, c2 = tj.lstm_cell(Tensor(h0), Tensor(c0), Tensor(x0), store)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    z = np.concatenate([h0, x0], axis=1)
    f = sig(z @ store["lstm.w_f"].data + store["lstm.b_f"].data)
    i = sig(z @ store["lstm.w_i"].data + store["lstm.b_i"].data)
    o = sig(z @ store["lstm.w_o"].data + store["lstm.b_o"].data)
    ct = np.tanh(z @ store["lstm.w_c"].data + store["lstm.b_c"].data)
    c_ref = f * c0 + i * ct
    h_ref = o * np.tanh(c_ref)
    assert np.allclose(c2.data, c_ref, atol=1e-12)
    assert np.allclose(h2.data, h_ref, atol=1e-12)
    assert ((f > 0) & (f < 1)).all() and ((o > 0) & (o < 1)).all()


def test_unrolled_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    store = tj.init_trajectory_params(6, rng)
    xs = rng.normal(size=(3, 4, 6))  # batch of 3 windows, 4 steps

    def fn():
        out = tj._rollout(xs, store, 6)
        return ad.reduce_mean(ad.mul(out, out))

    assert ad.grad_check(fn, store, sample_frac=0.2, seed=6) < 1e-4


# ---------------------------------------------------------------------------
# Prediction and training
# ---------------------------------------------------------------------------


def test_zero_readout_predicts_history_mean():
    model = zero_model()
    history = circle_sequence(10)
    pred = tj.predict_head_state(history, model)
    mean = np.stack([s.to_array() for s in history]).mean(axis=0)
    mean[3:] = tj.wrap_deg(mean[3:])
    assert np.allclose(pred.to_array(), mean, atol=1e-12)


def test_empty_history_rejected():
    with pytest.raises(InvalidArgumentError):
        tj.predict_head_state([], zero_model())


def test_training_reduces_loss_and_memorizes_constant():
    const = [tj.HeadState(0.3, -0.1, 0.9, 10.0, 20.0, -5.0)] * 24
    model, final_loss = tj.train_trajectory(
        [const], window=8, hidden=16, steps=200, seed=7
    )
    assert final_loss < 1e-4
    pred = tj.predict_head_state(const[:8], model)
    assert np.allclose(pred.to_array(), const[0].to_array(), atol=1e-3)


def test_training_is_seed_deterministic():
    seqs = [circle_sequence(40)]
    m1, l1 = tj.train_trajectory(seqs, window=8, hidden=8, steps=30, seed=9)
    m2, l2 = tj.train_trajectory(seqs, window=8, hidden=8, steps=30, seed=9)
    assert l1 == l2
    for name, t in m1.params.items():
        assert np.array_equal(t.data, m2.params[name].data)


def test_single_repeated_sequence_memorizes():
    seq = circle_sequence(30, phase=0.4)
    model, loss = tj.train_trajectory(
        [seq], window=8, hidden=16, steps=500, seed=8, lr=3e-2
    )
    assert loss < 1e-4


def test_angles_of_predictions_always_wrapped():
    seqs = [circle_sequence(40, phase=p) for p in (0.0, 1.1)]
    model, _ = tj.train_trajectory(seqs, window=8, hidden=8, steps=50, seed=10)
    for start in (0, 7, 19):
        pred = tj.predict_head_state(seqs[0][start : start + 8], model)
        for a in (pred.alpha, pred.beta, pred.gamma):
            assert -180.0 < a <= 180.0


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def test_trajectory_csv_round_trip(tmp_path):
    per_user = {
        0: circle_sequence(6),
        3: circle_sequence(6, phase=0.5, radius=2.0),
    }
    p = tmp_path / "traj.csv"
    tj.save_trajectories(p, per_user)
    back = tj.load_trajectories(p)
    assert set(back) == {0, 3}
    for u in back:
        got = np.stack([s.to_array() for s in back[u]])
        want = np.stack([s.to_array() for s in per_user[u]])
        assert np.array_equal(got, want)


def test_trajectory_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("frame,user,X,Y,Z\n0,0,1,2,3\n")
    with pytest.raises(InvalidArgumentError):
        tj.load_trajectories(p)

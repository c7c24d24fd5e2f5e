"""End-to-end orchestration: scene loading, training, prediction.

Per training step, a batch of mapped tile pairs flows through URS sampling
(precomputed), the spatial and temporal encoders, the trajectory-derived
viewport features, two attention-fusion stages, and the classifier head;
the class-weighted cross-entropy gradient is merged by summation across the
batch and applied with Adam. All geometry (URS picks, KNN index sets, kept
subsets, upsampling maps) is frozen per tile pair before the first step, so
steps only pay for the differentiable math.

Every random draw derives from the master seed through named substreams,
which makes training, prediction, and generated artifacts reproducible.
"""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import fusion as fu
from . import metrics as mx
from . import saliency as sal
from . import trajectory as tj
from . import viewport as vp
from .autodiff import ParamStore
from .checkpoint import load_params, save_params
from .config import PipelineConfig
from .errors import InvalidArgumentError
from .frames import PointCloudFrame, grays_of
from .knn import KnnIndex
from .ply import load_ply
from .sampling import SampledTile, SamplingMethod, sample_tile
from .tiling import SequenceManifest, TiledFrame, tile_frame


def derive_seed(master: int, *parts: int) -> int:
    """Stable 64-bit substream seed from the master seed and a name path."""
    ss = np.random.SeedSequence([master & 0xFFFFFFFFFFFFFFFF, *parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# Scene data
# ---------------------------------------------------------------------------


@dataclass
class SceneData:
    root: Path
    manifest: SequenceManifest
    frames: list[PointCloudFrame]
    tilings: list[TiledFrame]
    trajectories: dict[int, list[tj.HeadState]]


def load_scene(scene_dir) -> SceneData:
    root = Path(scene_dir)
    manifest = SequenceManifest.load(root / "seq.manifest")
    frames = [
        load_ply(root / rel, frame_index=i)
        for i, rel in enumerate(manifest.frame_paths)
    ]
    tilings = [
        tile_frame(f, manifest.grid, manifest.global_bbox) for f in frames
    ]
    trajectories = tj.load_trajectories(root / "trajectory.csv")
    return SceneData(root, manifest, frames, tilings, trajectories)


def states_at(scene: SceneData, t: int) -> list[tj.HeadState]:
    return [seq[t] for seq in scene.trajectories.values() if t < len(seq)]


def ground_truth(scene: SceneData, cfg: PipelineConfig, t: int) -> vp.FovLabels:
    return vp.build_ground_truth(
        scene.frames[t], states_at(scene, t), cfg.fov_params(), cfg.freq_threshold
    )


# ---------------------------------------------------------------------------
# Model assembly
# ---------------------------------------------------------------------------


def build_store(cfg: PipelineConfig, seed: int) -> ParamStore:
    store = ParamStore()
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 1])
    enc = cfg.encoder_config()
    sal.init_saliency_params(store, enc, rng)
    vp.init_lstm_feature_params(store, enc.widths[0], rng)
    fu.init_fusion_params(store, enc.widths[0], rng)
    return store


@dataclass
class TilePairPlan:
    tile_id: int
    t: int
    sampled_t: SampledTile
    sampled_prev: SampledTile
    enc_t: sal.EncoderPlan
    enc_prev: sal.EncoderPlan
    fl_labels: vp.FovLabels
    gt_sampled: np.ndarray


def qualifying_tiles(scene: SceneData, cfg: PipelineConfig, t: int) -> list[int]:
    """Tiles holding enough points for URS in both frames of the pair."""
    return [
        j
        for j in range(scene.tilings[t].n_tiles)
        if len(scene.tilings[t].tiles[j]) >= cfg.n_samples
        and len(scene.tilings[t - 1].tiles[j]) >= cfg.n_samples
    ]


def _sample(scene, cfg, t, j) -> SampledTile:
    return sample_tile(
        scene.frames[t],
        scene.tilings[t],
        j,
        SamplingMethod.URS,
        cfg.n_samples,
        cfg.n_cubes,
        derive_seed(cfg.seed, 3, t, j),
    )


def build_tile_pair_plan(
    scene: SceneData,
    cfg: PipelineConfig,
    t: int,
    j: int,
    fl_labels: vp.FovLabels,
    gt: vp.FovLabels | None,
) -> TilePairPlan:
    enc_cfg = cfg.encoder_config()
    sampled_t = _sample(scene, cfg, t, j)
    sampled_prev = _sample(scene, cfg, t - 1, j)
    plan_t = sal.build_plan(
        sampled_t.positions,
        grays_of(sampled_t.colors),
        enc_cfg,
        derive_seed(cfg.seed, 4, t, j),
    )
    plan_prev = sal.build_plan(
        sampled_prev.positions,
        grays_of(sampled_prev.colors),
        enc_cfg,
        derive_seed(cfg.seed, 4, t - 1, j),
    )
    gt_sampled = (
        gt.labels[sampled_t.point_indices]
        if gt is not None
        else np.zeros(cfg.n_samples, dtype=np.uint8)
    )
    return TilePairPlan(
        j, t, sampled_t, sampled_prev, plan_t, plan_prev, fl_labels, gt_sampled
    )


def forward_tile_pair(
    plan: TilePairPlan,
    store: ParamStore,
    cfg: PipelineConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Logits at the sampled points of frame t for one mapped tile pair."""
    enc_cfg = cfg.encoder_config()
    f0t = sal.initial_features(plan.sampled_t.positions, plan.sampled_t.colors, store)
    f0p = sal.initial_features(
        plan.sampled_prev.positions, plan.sampled_prev.colors, store
    )
    f_s, f_t, intensities = sal.encode_pair(
        f0t, f0p, plan.enc_t, plan.enc_prev, store, enc_cfg
    )
    f_l = vp.render_lstm_feature(plan.sampled_t, plan.fl_labels, store)
    f_st = fu.attention_fuse(f_s, f_t, store, "fuse.w1", "fuse.w2", "F_ST")
    f_e = fu.attention_fuse(f_st, f_l, store, "fuse.w3", "fuse.w4", "F_E")
    logits = fu.head_logits(f_e.tensor, store, training, rng)
    return logits, intensities


# ---------------------------------------------------------------------------
# Trajectory stage
# ---------------------------------------------------------------------------


def fit_trajectory(scene: SceneData, cfg: PipelineConfig, n_frames: int):
    """Train the head-state model on the first ``n_frames`` of every user."""
    sequences = [
        seq[:n_frames]
        for seq in scene.trajectories.values()
        if len(seq[:n_frames]) > cfg.lstm_window
    ]
    if not sequences:
        raise InvalidArgumentError(
            f"no trajectory longer than the LSTM window {cfg.lstm_window}"
        )
    model, loss = tj.train_trajectory(
        sequences,
        window=cfg.lstm_window,
        hidden=cfg.lstm_hidden,
        steps=cfg.lstm_steps,
        lr=cfg.lstm_lr,
        seed=derive_seed(cfg.seed, 2),
    )
    return model, loss


def predicted_fov_labels(
    scene: SceneData,
    cfg: PipelineConfig,
    model: tj.TrajectoryModel,
    t: int,
    user: int = 0,
) -> vp.FovLabels:
    """FoV labels of frame t from the user's forecast head state, given the
    states observed before t."""
    seq = scene.trajectories[user]
    history = seq[max(0, t - cfg.lstm_window) : t]
    state = tj.predict_head_state(history, model)
    frustum = vp.head_state_to_frustum(state, cfg.fov_params())
    return vp.classify_in_fov(scene.frames[t], frustum)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Path
    metrics_log: Path
    steps: int
    final_loss: float
    epochs: int


def _epoch_metrics(plans, preds, cfg) -> tuple:
    pred_cat = np.concatenate([p for p in preds])
    gt_cat = np.concatenate([p.gt_sampled for p in plans])
    c = mx.confusion(pred_cat, gt_cat)
    oa, prec, rec, pm = mx.point_metrics(c)
    pred_tiles, gt_tiles = [], []
    for plan, pred in zip(plans, preds):
        pred_tiles.append(pred.mean() >= cfg.tau)
        gt_tiles.append(plan.gt_sampled.mean() >= cfg.tau)
    tm = mx.miou_of(mx.confusion(np.array(pred_tiles), np.array(gt_tiles)))
    return oa, prec, rec, pm, tm


def train_pipeline(
    scene_dir,
    cfg: PipelineConfig,
    out_dir,
    threads: int = 0,
    log=print,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = load_scene(scene_dir)
    n_frames = len(scene.frames)
    n_train = n_frames - cfg.test_frames
    if n_train < 2:
        raise InvalidArgumentError(
            f"{n_frames} frames with {cfg.test_frames} held out leaves "
            "fewer than one training pair"
        )

    t0 = time.perf_counter()
    traj_model, traj_loss = fit_trajectory(scene, cfg, n_train)
    log(f"trajectory model fitted, loss {traj_loss:.2e}")

    store = build_store(cfg, cfg.seed)
    pairs = [
        (t, j) for t in range(1, n_train) for j in qualifying_tiles(scene, cfg, t)
    ]
    if not pairs:
        raise InvalidArgumentError("no tile pair holds enough points for URS")
    fl_cache = {
        t: predicted_fov_labels(scene, cfg, traj_model, t, cfg.user)
        for t in sorted({t for t, _ in pairs})
    }
    gt_cache = {t: ground_truth(scene, cfg, t) for t in sorted({t for t, _ in pairs})}

    workers = threads if threads > 0 else None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        plans = list(
            pool.map(
                lambda tj_: build_tile_pair_plan(
                    scene, cfg, tj_[0], tj_[1], fl_cache[tj_[0]], gt_cache[tj_[0]]
                ),
                pairs,
            )
        )
    log(
        f"{len(plans)} tile-pair plans built in {time.perf_counter() - t0:.1f}s"
    )

    order = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 5]).permutation(
        len(plans)
    )
    metrics_path = out / "metrics.csv"
    mf = open(metrics_path, "w", newline="")
    writer = csv.writer(mf)
    writer.writerow(
        ["epoch", "loss", "point_miou", "tile_miou", "oa", "precision", "recall"]
    )

    steps_per_epoch = max(1, int(np.ceil(len(plans) / cfg.batch)))
    losses, epoch_preds, epoch_plans = [], [], []
    epoch = 0
    final_loss = np.inf
    fmt = lambda v: "" if v is None else f"{v:.6f}"
    for step in range(cfg.steps):
        at = (step * cfg.batch) % len(plans)
        batch = [plans[i] for i in order[at : at + cfg.batch]]
        if not batch:
            batch = [plans[i] for i in order[: cfg.batch]]
        weights = fu.class_weights(np.concatenate([p.gt_sampled for p in batch]))
        store.zero_grads()
        batch_loss = 0.0
        for slot, plan in enumerate(batch):
            rng = np.random.default_rng(
                [cfg.seed & 0xFFFFFFFFFFFFFFFF, 6, step, slot]
            )
            with ad.Tape() as tape:
                logits, _ = forward_tile_pair(plan, store, cfg, True, rng)
                loss = fu.fusion_loss(logits, plan.gt_sampled, weights) * (
                    1.0 / len(batch)
                )
            ad.backward(tape, loss)
            batch_loss += loss.item()
            epoch_preds.append(np.argmax(logits.data, axis=1))
            epoch_plans.append(plan)
        ad.adam_step(store, lr=cfg.lr)
        losses.append(batch_loss)
        final_loss = batch_loss
        if (step + 1) % steps_per_epoch == 0 or step + 1 == cfg.steps:
            oa, prec, rec, pm, tm = _epoch_metrics(epoch_plans, epoch_preds, cfg)
            mean_loss = float(np.mean(losses))
            writer.writerow(
                [epoch, f"{mean_loss:.6f}"]
                + [fmt(v) for v in (pm, tm, oa, prec, rec)]
            )
            log(
                f"epoch {epoch}: loss {mean_loss:.4f} point_miou {fmt(pm)} "
                f"tile_miou {fmt(tm)}"
            )
            losses, epoch_preds, epoch_plans = [], [], []
            epoch += 1
    mf.close()

    ckpt = out / "model.ckpt"
    merged = ParamStore()
    for name, tensor in store.items():
        merged.add(name, tensor.data)
    for name, tensor in traj_model.params.items():
        merged.add(f"traj.{name}", tensor.data)
    save_params(merged, ckpt)
    return TrainResult(ckpt, metrics_path, cfg.steps, final_loss, epoch)


def split_checkpoint(path) -> tuple[ParamStore, ParamStore]:
    """Load a merged checkpoint into (pipeline store, trajectory store)."""
    merged = load_params(path)
    main, traj = ParamStore(), ParamStore()
    for name, tensor in merged.items():
        if name.startswith("traj."):
            traj.add(name[len("traj.") :], tensor.data)
        else:
            main.add(name, tensor.data)
    return main, traj


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict_frame(
    scene: SceneData,
    cfg: PipelineConfig,
    store: ParamStore,
    traj_model: tj.TrajectoryModel,
    t: int,
    user: int = 0,
) -> vp.FovLabels:
    """Full-frame labels for frame t: classifier output at the sampled
    points, extended to every tile point by nearest sampled neighbor.
    Tiles too small to sample stay background."""
    if t < 1:
        raise InvalidArgumentError("prediction needs a preceding frame")
    fl = predicted_fov_labels(scene, cfg, traj_model, t, user)
    labels = np.zeros(len(scene.frames[t]), dtype=np.uint8)
    for j in qualifying_tiles(scene, cfg, t):
        plan = build_tile_pair_plan(scene, cfg, t, j, fl, None)
        logits, _ = forward_tile_pair(plan, store, cfg, training=False)
        sampled_labels = np.argmax(logits.data, axis=1).astype(np.uint8)
        tile_idx = scene.tilings[t].tiles[j]
        nn = KnnIndex(plan.sampled_t.positions).query_many(
            scene.frames[t].positions[tile_idx], 1
        )[:, 0]
        labels[tile_idx] = sampled_labels[nn]
    return vp.FovLabels(t, labels)


def evaluate_frames(
    scene: SceneData,
    cfg: PipelineConfig,
    predictions: dict[int, vp.FovLabels],
) -> mx.EvalReport:
    """Pooled report over frames: point metrics on all points, tile MIoU
    averaged through pooled tile labels."""
    preds, gts, tile_pred, tile_gt = [], [], [], []
    excluded = 0
    for t, pl in sorted(predictions.items()):
        gt = ground_truth(scene, cfg, t)
        preds.append(pl.labels)
        gts.append(gt.labels)
        p_lab, valid = mx.tile_labels(pl.labels, scene.tilings[t], cfg.tau)
        g_lab, _ = mx.tile_labels(gt.labels, scene.tilings[t], cfg.tau)
        tile_pred.append(p_lab[valid])
        tile_gt.append(g_lab[valid])
        excluded += int((~valid).sum())
    c = mx.confusion(np.concatenate(preds), np.concatenate(gts))
    oa, prec, rec, pm = mx.point_metrics(c)
    tm = mx.miou_of(mx.confusion(np.concatenate(tile_pred), np.concatenate(tile_gt)))
    return mx.EvalReport(oa, prec, rec, pm, tm, excluded)

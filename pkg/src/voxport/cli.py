"""The ``voxport`` command line.

Subcommands: gen-scene, tile, sample-bench, gt-gen, train, predict, eval.
Exit codes: 0 success, 1 validation error, 2 I/O error. All randomness
derives from ``--seed``; ``VOXPORT_THREADS`` overrides ``--threads``.
Outputs land under ``--out``.
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from . import viewport as vp
from .bench import IFMI_THRESHOLDS, sampling_benchmark
from .config import PipelineConfig, toy_config
from .errors import (
    CorruptFileError,
    ParseError,
    UnsupportedFormatError,
    VoxportError,
)
from .metrics import tile_labels
from .sampling import SamplingMethod
from .scene import SyntheticSceneSpec, gen_scene
from .trajectory import TrajectoryModel


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _threads(args) -> int:
    env = os.environ.get("VOXPORT_THREADS", "").strip()
    if env:
        return int(env)
    return args.threads


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else toy_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.steps = args.steps
    return cfg


def build_parser() -> _Parser:
    p = _Parser(prog="voxport", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--threads", type=int, default=0)
        if config:
            sp.add_argument("--config", type=Path, default=None)

    g = sub.add_parser("gen-scene", help="generate a synthetic scene directory")
    common(g, config=False)
    g.add_argument("--frames", type=int, default=10)
    g.add_argument("--users", type=int, default=8)
    g.add_argument("--static", type=int, default=3)
    g.add_argument("--points-per-object", type=int, default=1500)
    g.add_argument("--background-points", type=int, default=18000)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--mode", choices=("circle", "line"), default="circle")
    g.add_argument("--velocity", type=float, nargs=3, default=(0.18, 0.0, 0.12))

    t = sub.add_parser("tile", help="tile a scene, report per-tile point counts")
    common(t)
    t.add_argument("--scene", type=Path, required=True)

    b = sub.add_parser("sample-bench", help="benchmark samplers and IFMI")
    common(b, config=False)
    b.add_argument("--methods", default="urs,rs,fps")
    b.add_argument("--points", type=int, default=100_000)
    b.add_argument("--sample-n", type=int, default=None)
    b.add_argument("--no-ifmi", action="store_true")

    q = sub.add_parser("gt-gen", help="multi-user ground-truth labels")
    common(q)
    q.add_argument("--scene", type=Path, required=True)
    q.add_argument("--freq-threshold", type=int, default=None)

    r = sub.add_parser("train", help="train the full pipeline on a scene")
    common(r)
    r.add_argument("--scene", type=Path, required=True)
    r.add_argument("--steps", type=int, default=None)

    d = sub.add_parser("predict", help="predict FoV labels with a checkpoint")
    common(d)
    d.add_argument("--scene", type=Path, required=True)
    d.add_argument("--checkpoint", type=Path, required=True)
    d.add_argument("--frames", default=None, help="comma list, default held-out")
    d.add_argument("--user", type=int, default=None, help="default: config user")

    e = sub.add_parser("eval", help="compare predicted labels against ground truth")
    common(e)
    e.add_argument("--scene", type=Path, required=True)
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--tau", type=float, default=None)
    return p


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    spec = SyntheticSceneSpec(
        n_frames=args.frames,
        n_static=args.static,
        points_per_object=args.points_per_object,
        background_points=args.background_points,
        n_users=args.users,
        viewer_mode=args.mode,
        noise_level=args.noise,
        velocity=tuple(args.velocity),
        seed=args.seed if args.seed is not None else 7,
    )
    out = gen_scene(spec, args.out)
    print(f"scene written to {out}")
    return 0


def cmd_tile(args) -> int:
    scene = pl.load_scene(args.scene)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "tiles.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "tile", "points"])
        for tiled in scene.tilings:
            for j, idx in enumerate(tiled.tiles):
                w.writerow([tiled.frame_index, j, len(idx)])
    print(f"tile table written to {path}")
    return 0


def cmd_sample_bench(args) -> int:
    try:
        methods = [SamplingMethod(m.strip()) for m in args.methods.split(",") if m]
    except ValueError as e:
        raise VoxportError(f"unknown sampling method in {args.methods!r}") from None
    seed = args.seed if args.seed is not None else 0
    rows, table = sampling_benchmark(
        args.points, methods, seed, n_samples=args.sample_n,
        with_ifmi=not args.no_ifmi,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    bench_path = args.out / "bench.csv"
    with open(bench_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "n_points", "time_ms", "peak_bytes"])
        for row in rows:
            w.writerow(
                [row.method, row.n_points, f"{row.time_ms:.3f}", row.peak_bytes]
            )
    print(f"benchmark written to {bench_path}")
    if table:
        ifmi_path = args.out / "ifmi.csv"
        with open(ifmi_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["method"] + [str(t) for t in IFMI_THRESHOLDS])
            for method, curve in table.items():
                w.writerow(
                    [method] + [f"{curve[t]:.4f}" for t in IFMI_THRESHOLDS]
                )
        print(f"IFMI table written to {ifmi_path}")
    return 0


def cmd_gt_gen(args) -> int:
    cfg = _load_config(args)
    if args.freq_threshold is not None:
        cfg.freq_threshold = args.freq_threshold
    scene = pl.load_scene(args.scene)
    labels = [
        pl.ground_truth(scene, cfg, t) for t in range(len(scene.frames))
    ]
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "gt_labels.csv"
    vp.save_labels(path, labels)
    rate = float(np.concatenate([l.labels for l in labels]).mean())
    print(f"ground truth written to {path} (positive rate {rate:.3f})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = pl.train_pipeline(args.scene, cfg, args.out, threads=_threads(args))
    print(
        f"trained {result.steps} steps ({result.epochs} epochs), "
        f"final loss {result.final_loss:.4f}"
    )
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics log: {result.metrics_log}")
    return 0


def _frame_list(args, scene, cfg) -> list[int]:
    if args.frames:
        return [int(v) for v in str(args.frames).split(",") if v != ""]
    start = max(1, len(scene.frames) - cfg.test_frames)
    return list(range(start, len(scene.frames)))


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    scene = pl.load_scene(args.scene)
    store, traj = pl.split_checkpoint(args.checkpoint)
    model = TrajectoryModel(
        traj, hidden=traj["lstm.w_f"].data.shape[1], window=cfg.lstm_window
    )
    frames = _frame_list(args, scene, cfg)
    user = cfg.user if args.user is None else args.user
    labels = [
        pl.predict_frame(scene, cfg, store, model, t, user) for t in frames
    ]
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "pred_labels.csv"
    vp.save_labels(path, labels)
    print(f"predictions for frames {frames} written to {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if args.tau is not None:
        cfg.tau = args.tau
    scene = pl.load_scene(args.scene)
    pred = vp.load_labels(args.pred)
    gt = vp.load_labels(args.gt)
    common = sorted(set(pred) & set(gt))
    if not common:
        raise VoxportError("prediction and ground truth share no frames")
    preds, gts, tp_lab, tg_lab = [], [], [], []
    per_tile_rows = []
    for t in common:
        if len(pred[t]) != len(scene.frames[t]) or len(gt[t]) != len(scene.frames[t]):
            raise VoxportError(
                f"frame {t}: labels must cover all {len(scene.frames[t])} points"
            )
        preds.append(pred[t])
        gts.append(gt[t])
        p_lab, valid = tile_labels(pred[t], scene.tilings[t], cfg.tau)
        g_lab, _ = tile_labels(gt[t], scene.tilings[t], cfg.tau)
        tp_lab.append(p_lab[valid])
        tg_lab.append(g_lab[valid])
        for j in range(scene.tilings[t].n_tiles):
            idx = scene.tilings[t].tiles[j]
            if idx.size:
                per_tile_rows.append(
                    [t, j, f"{pred[t][idx].mean():.4f}", f"{gt[t][idx].mean():.4f}",
                     int(p_lab[j]), int(g_lab[j])]
                )
    from . import metrics as mx

    c = mx.confusion(np.concatenate(preds), np.concatenate(gts))
    oa, prec, rec, pm = mx.point_metrics(c)
    tm = mx.miou_of(mx.confusion(np.concatenate(tp_lab), np.concatenate(tg_lab)))
    report = mx.EvalReport(oa, prec, rec, pm, tm)
    args.out.mkdir(parents=True, exist_ok=True)
    rp = args.out / "report.csv"
    with open(rp, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["oa", "precision", "recall", "point_miou", "tile_miou"])
        w.writerow(report.as_row())
    tile_path = args.out / "tiles_report.csv"
    with open(tile_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "tile", "pred_fraction", "gt_fraction",
                    "pred_label", "gt_label"])
        w.writerows(per_tile_rows)
    fmt = lambda v: "absent" if v is None else f"{v:.4f}"
    print(
        f"oa {fmt(report.oa)} precision {fmt(report.precision)} "
        f"recall {fmt(report.recall)} point_miou {fmt(report.point_miou)} "
        f"tile_miou {fmt(report.tile_miou)}"
    )
    print(f"report: {rp}")
    return 0


_COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "tile": cmd_tile,
    "sample-bench": cmd_sample_bench,
    "gt-gen": cmd_gt_gen,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, CorruptFileError, UnsupportedFormatError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except VoxportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command-line entry point.

Subcommands map one-to-one onto the library pipeline: generate a synthetic
scene log, build an observation dataset from logs, build an eval set, train,
evaluate, slice accuracy by density, fit a compute-scaling power law,
benchmark inference, and inspect dataset statistics.

Every run writes a resolved_config.json capturing all effective values.
Flags are long-form only; a JSON config file may supply defaults and
explicit flags win. Exit codes: 0 success, 1 usage error, 2 data/format
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    ConfigError,
    FormatError,
    InputError,
    SynthConfig,
    extract_observations,
    generate_synthetic,
    read_dataset,
    read_detections,
    read_frames,
    read_gt,
    write_dataset,
    write_detections,
    write_frames,
    write_gt,
)
from .evaluation import (
    BOTH_ATLEAST,
    ONE_ATLEAST,
    bench,
    density_curve,
    evaluate,
    fit_power_law,
    predict_pairs,
    report_from_predictions,
)
from .model import (
    CheckpointError,
    EncoderConfig,
    ReidModel,
    RtmmConfig,
    config_from_json,
    config_to_json,
    load_checkpoint,
)
from .sampling import build_eval_set, read_eval_set, write_eval_set
from .training import ScheduleConfig, TrainConfig, train
from .util import atomic_write

USAGE_ERROR = 1
DATA_ERROR = 2

_DATA_ERRORS = (FormatError, InputError, ConfigError, CheckpointError,
                FileNotFoundError, NotADirectoryError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _write_json(path, obj) -> None:
    with atomic_write(path) as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _resolved_config(out_dir, command: str, values: dict) -> None:
    _write_json(Path(out_dir) / "resolved_config.json", {"command": command, **values})


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: bad JSON config ({e})") from e


def _pick(args_value, config: dict, key: str, default):
    if args_value is not None:
        return args_value
    if key in config:
        return config[key]
    return default


def _parse_objects(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        if not part:
            continue
        cls, _, count = part.partition("=")
        out[cls.strip()] = int(count)
    return out


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


# -- subcommand handlers -------------------------------------------------


def _cmd_gen_synthetic(args) -> int:
    config = _load_config_file(args.config)
    if args.preset == "benchmark":
        cfg = SynthConfig.benchmark()
    elif args.preset == "separable":
        cfg = SynthConfig.separable()
    else:
        cfg = SynthConfig()
    cfg = SynthConfig(
        n_objects=_parse_objects(args.objects) if args.objects else _pick(None, config, "n_objects", cfg.n_objects),
        frames=_pick(args.frames, config, "frames", cfg.frames),
        lam=_parse_floats(args.lam) if args.lam else _pick(None, config, "lam", cfg.lam),
        sigma_center=_pick(args.sigma_center, config, "sigma_center", cfg.sigma_center),
        sigma_yaw=_pick(args.sigma_yaw, config, "sigma_yaw", cfg.sigma_yaw),
        fp_rate=_pick(args.fp_rate, config, "fp_rate", cfg.fp_rate),
        articulation=_pick(None, config, "articulation", cfg.articulation),
    )
    detections, gt, frame_points = generate_synthetic(cfg, args.seed)
    out = Path(args.out)
    write_detections(detections, out / "detections.jsonl")
    write_gt(gt, out / "gt.jsonl")
    write_frames(frame_points, out)
    _resolved_config(out, "gen-synthetic", {
        "seed": args.seed, "preset": args.preset,
        **{k: v if not isinstance(v, tuple) else list(v)
           for k, v in dataclasses.asdict(cfg).items()},
    })
    print(f"wrote {len(detections)} detections over {cfg.frames} frames to {out}")
    return 0


def _cmd_build_dataset(args) -> int:
    src = Path(args.logs)
    detections = read_detections(src / "detections.jsonl")
    gt = read_gt(src / "gt.jsonl")
    frame_points = read_frames(src)
    ds = extract_observations(detections, gt, frame_points,
                              tau_c=args.tau_c, tau_iou=args.tau_iou)
    write_dataset(ds, args.out)
    _resolved_config(args.out, "build-dataset", {
        "logs": str(src), "tau_c": args.tau_c, "tau_iou": args.tau_iou,
    })
    print(f"extracted {len(ds)} observations of {ds.n_objects()} objects to {args.out}")
    return 0


def _cmd_make_eval_set(args) -> int:
    ds = read_dataset(args.dataset)
    ev = build_eval_set(ds, max_pos_per_object=args.max_pos,
                        min_points=args.min_points, seed=args.seed)
    write_eval_set(ev, args.out)
    _resolved_config(Path(args.out).parent, "make-eval-set", {
        "dataset": str(args.dataset), "max_pos": args.max_pos,
        "min_points": args.min_points, "seed": args.seed,
        "n_pairs": len(ev.pairs), "skipped_negatives": ev.skipped_negatives,
    })
    print(f"wrote {len(ev.pairs)} eval pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config_file(args.config)
    ds = read_dataset(args.dataset)
    encoder_cfg = EncoderConfig(
        kind=_pick(args.encoder, config, "encoder", "pointnet_lite"),
        out_dim=_pick(args.dim, config, "dim", 64),
        n_points=_pick(args.n_points, config, "n_points", 128),
    )
    rtmm_cfg = RtmmConfig(
        layers=_pick(args.layers, config, "layers", 2),
        dim=encoder_cfg.out_dim,
    )
    train_cfg = TrainConfig(
        lr_base=_pick(args.lr, config, "lr_base", 3e-4),
        weight_decay=_pick(args.weight_decay, config, "weight_decay", 0.01),
        clip_norm=_pick(args.clip_norm, config, "clip_norm", 1.0),
        batch_size=_pick(args.batch_size, config, "batch_size", 256),
        epochs=_pick(args.epochs, config, "epochs", 100),
        schedule=ScheduleConfig(),
        seed=args.seed,
        sampler=_pick(args.sampler, config, "sampler", "even"),
        early_stop_accuracy=args.early_stop_accuracy,
    )
    model = ReidModel(encoder_cfg, rtmm_cfg, seed=args.seed)
    report = train(model, ds, train_cfg, args.out)
    with atomic_write(Path(args.out) / "model_config.json") as f:
        f.write(config_to_json(encoder_cfg, rtmm_cfg))
    _resolved_config(args.out, "train", {
        "dataset": str(args.dataset), "seed": args.seed,
        "deterministic": args.deterministic,
        "encoder": dataclasses.asdict(encoder_cfg),
        "rtmm": dataclasses.asdict(rtmm_cfg),
        "train": {k: v for k, v in dataclasses.asdict(train_cfg).items()},
    })
    print(f"trained {report.steps} steps over {report.epochs} epochs; "
          f"final loss {report.final_loss:.4f}, checkpoint {report.checkpoint_path}")
    return 0


def _load_model(model_dir) -> ReidModel:
    model_dir = Path(model_dir)
    cfg_path = model_dir / "model_config.json"
    ckpt_path = model_dir / "model.ckpt"
    if not cfg_path.is_file() or not ckpt_path.is_file():
        raise FileNotFoundError(f"{model_dir}: expected model.ckpt and model_config.json")
    encoder_cfg, rtmm_cfg = config_from_json(cfg_path.read_text())
    return load_checkpoint(ckpt_path, encoder_cfg, rtmm_cfg)


def _cmd_eval(args) -> int:
    ds = read_dataset(args.dataset)
    model = _load_model(args.model)
    ev = read_eval_set(args.pairs, ds)
    report = evaluate(model, ev, ds, threshold=args.threshold, seed=args.seed)
    out = Path(args.out)
    _write_json(out, {
        "accuracy": report.accuracy,
        "f1_pos": report.f1_pos,
        "f1_neg": report.f1_neg,
        "per_class": report.per_class,
        "fp_accuracy": report.fp_accuracy,
        "n_pairs": report.n_pairs,
        "threshold": args.threshold,
        "seed": args.seed,
    })
    _resolved_config(out.parent, "eval", {
        "dataset": str(args.dataset), "model": str(args.model),
        "pairs": str(args.pairs), "threshold": args.threshold, "seed": args.seed,
    })
    print(f"accuracy {report.accuracy:.4f}  f1_pos {report.f1_pos:.4f}  "
          f"f1_neg {report.f1_neg:.4f}  ({report.n_pairs} pairs)")
    return 0


def _cmd_curve(args) -> int:
    ds = read_dataset(args.dataset)
    model = _load_model(args.model)
    ev = read_eval_set(args.pairs, ds)
    mode = {"both": BOTH_ATLEAST, "one": ONE_ATLEAST}[args.mode]
    pred = predict_pairs(model, ev, ds, threshold=args.threshold, seed=args.seed)
    rows = density_curve(pred, mode, _parse_ints(args.thresholds))
    out = Path(args.out)
    with atomic_write(out) as f:
        f.write("x,mode,accuracy,n_pairs\n")
        for x, acc, n in rows:
            f.write(f"{x},{args.mode},{acc:.6f},{n}\n")
    _resolved_config(out.parent, "curve", {
        "dataset": str(args.dataset), "model": str(args.model),
        "pairs": str(args.pairs), "mode": args.mode,
        "thresholds": args.thresholds, "threshold": args.threshold,
        "seed": args.seed,
    })
    for x, acc, n in rows:
        print(f"x>={x:<5d} accuracy {acc:.4f}  ({n} pairs)")
    return 0


def _parse_points(text: str) -> list[tuple[float, float]]:
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        x, _, err = chunk.partition(",")
        points.append((float(x), float(err)))
    return points


def _cmd_fit_powerlaw(args) -> int:
    points = _parse_points(args.points)
    grid = _parse_floats(args.grid) if args.grid else None
    fit = fit_power_law(points, grid)
    result = {
        "eps_inf": fit.eps_inf, "beta": fit.beta, "c": fit.c,
        "residual": fit.residual,
        "points": [[x, e] for x, e in points],
    }
    if args.out:
        _write_json(args.out, result)
        _resolved_config(Path(args.out).parent, "fit-powerlaw", {
            "points": args.points, "grid": args.grid,
        })
    print(f"err(x) = {fit.eps_inf:g} + {fit.beta:.4g} * x^{fit.c:.4g}  "
          f"(residual {fit.residual:.3g})")
    return 0


def _cmd_bench(args) -> int:
    if args.model:
        model = _load_model(args.model)
    else:
        model = ReidModel(EncoderConfig(), RtmmConfig(), seed=args.seed)
    report = bench(model, batch_size=args.batch, n_trials=args.trials,
                   warmup=args.warmup, seed=args.seed)
    result = {
        "batch_size": report.batch_size,
        "n_trials": report.n_trials,
        "mean_ms": report.mean_ms,
        "stderr_ms": report.stderr_ms,
        "pairs_per_sec": report.pairs_per_sec,
        "samples_ms": report.samples_ms,
    }
    if args.out:
        _write_json(args.out, result)
        _resolved_config(Path(args.out).parent, "bench", {
            "model": str(args.model), "batch": args.batch,
            "trials": args.trials, "warmup": args.warmup, "seed": args.seed,
        })
    print(f"batch {report.batch_size}: {report.mean_ms:.2f} ms "
          f"+/- {report.stderr_ms:.2f} ms  ({report.pairs_per_sec:.0f} pairs/sec)")
    return 0


def _cmd_inspect(args) -> int:
    ds = read_dataset(args.dataset)
    classes = sorted(set(ds.class_of.values()) | set(ds.fp_index))
    rows = []
    for cls in sorted(ds.fp_index):
        n_obs = len(ds.fp_index[cls])
        rows.append((f"FP {cls}", "--", str(n_obs), "--", "--"))
    total_obj = total_obs = total_pos = 0
    total_neg = 0
    for cls in classes:
        objs = [o for o, c in ds.class_of.items() if c == cls]
        if not objs:
            continue
        sizes = [len(ds.index[o]) for o in objs]
        n_obs = sum(sizes)
        pos = sum(m * (m - 1) // 2 for m in sizes)
        tp_cross = (n_obs * n_obs - sum(m * m for m in sizes)) // 2
        neg = tp_cross + n_obs * len(ds.fp_index.get(cls, []))
        rows.append((cls, str(len(objs)), str(n_obs), f"{pos:.3g}" if pos >= 1e5 else str(pos),
                     f"{neg:.3g}" if neg >= 1e5 else str(neg)))
        total_obj += len(objs)
        total_obs += n_obs
        total_pos += pos
        total_neg += neg
    total_obs += sum(len(v) for v in ds.fp_index.values())
    rows.append(("Total", str(total_obj), str(total_obs),
                 f"{total_pos:.3g}" if total_pos >= 1e5 else str(total_pos),
                 f"{total_neg:.3g}" if total_neg >= 1e5 else str(total_neg)))
    widths = [max(len(r[i]) for r in rows + [("Class", "Objects", "Observations", "Pos. Pairs", "Neg. Pairs")])
              for i in range(5)]
    header = ("Class", "Objects", "Observations", "Pos. Pairs", "Neg. Pairs")
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return 0


# -- parser --------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="preid", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic detection/GT/frame log")
    p.add_argument("--out", required=True, help="output directory for the logs")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--config", help="JSON file with SynthConfig fields")
    p.add_argument("--preset", choices=["default", "benchmark", "separable"],
                   default="default", help="named configuration preset")
    p.add_argument("--objects", help="per-class object counts, e.g. car=10,pedestrian=5")
    p.add_argument("--frames", type=int, help="frames per run")
    p.add_argument("--lam", help="mean points per observation; comma list is sampled per object")
    p.add_argument("--sigma-center", type=float, help="detector center noise (m)")
    p.add_argument("--sigma-yaw", type=float, help="detector yaw noise (rad)")
    p.add_argument("--fp-rate", type=float, help="expected clutter detections per frame")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("build-dataset", help="extract observations from logs")
    p.add_argument("--logs", required=True, help="directory with detections.jsonl, gt.jsonl, frames.*")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--tau-c", type=float, default=0.1, help="detection score gate")
    p.add_argument("--tau-iou", type=float, default=0.01, help="IoU gate for TP matching")
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("make-eval-set", help="build a balanced density-matched eval set")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output pairs.jsonl path")
    p.add_argument("--max-pos", type=int, default=10, help="max positive pairs per object")
    p.add_argument("--min-points", type=int, default=2, help="drop observations below this point count")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.set_defaults(func=_cmd_make_eval_set)

    p = sub.add_parser("train", help="train a matching model")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="JSON config file; explicit flags win")
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", type=int, help="pairs per optimizer step")
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--weight-decay", type=float, help="decoupled weight decay")
    p.add_argument("--clip-norm", type=float, help="global gradient norm cap")
    p.add_argument("--sampler", choices=["even", "uniform"], help="pair sampling algorithm")
    p.add_argument("--encoder", choices=["pointnet_lite", "edgeconv_lite"], help="point encoder")
    p.add_argument("--dim", type=int, help="feature width")
    p.add_argument("--n-points", type=int, help="points per observation after resampling")
    p.add_argument("--layers", type=int, help="cross-attention layers")
    p.add_argument("--early-stop-accuracy", type=float,
                   help="stop once running batch accuracy reaches this level")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded fully reproducible mode")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on an eval set")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="training run directory")
    p.add_argument("--pairs", required=True, help="pairs.jsonl path")
    p.add_argument("--out", default="report.json", help="output report path")
    p.add_argument("--threshold", type=float, default=0.5, help="match probability threshold")
    p.add_argument("--seed", type=int, default=0, help="point-resampling seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("curve", help="accuracy as a function of point density")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="training run directory")
    p.add_argument("--pairs", required=True, help="pairs.jsonl path")
    p.add_argument("--mode", choices=["both", "one"], default="both",
                   help="require both or at least one observation above the threshold")
    p.add_argument("--thresholds", default="2,4,8,16,32,64", help="comma list of point counts")
    p.add_argument("--threshold", type=float, default=0.5, help="match probability threshold")
    p.add_argument("--out", default="curve.csv", help="output CSV path")
    p.add_argument("--seed", type=int, default=0, help="point-resampling seed")
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("fit-powerlaw", help="fit err(x) = eps_inf + beta * x^c")
    p.add_argument("--points", required=True,
                   help="semicolon-separated compute,error pairs, e.g. '14400,13.01;28800,11.95'")
    p.add_argument("--grid", help="comma list of error-floor candidates (default 0..8)")
    p.add_argument("--out", help="optional powerlaw.json output path")
    p.set_defaults(func=_cmd_fit_powerlaw)

    p = sub.add_parser("bench", help="inference throughput benchmark")
    p.add_argument("--model", help="training run directory (default: fresh random model)")
    p.add_argument("--batch", type=int, default=512, help="pairs per batch")
    p.add_argument("--trials", type=int, default=20, help="timed trials")
    p.add_argument("--warmup", type=int, default=5, help="discarded warmup trials")
    p.add_argument("--out", help="optional bench.json output path")
    p.add_argument("--seed", type=int, default=0, help="input generation seed")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("inspect", help="print dataset statistics")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())

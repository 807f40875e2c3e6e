"""Command-line entry point: synth, train, sweep, compare, predict, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio, experiments, train as train_mod
from .dataio import DataError
from .nn import DivergenceError


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", required=True, choices=["high", "two", "culture", "type"])
    p.add_argument("--features", required=True, help="feature table (CSV or AVBF binary)")
    p.add_argument("--labels", required=True, help="label CSV")
    p.add_argument("--scale-labels", action="store_true",
                   help="scale raw integer scores in [1,100] to [0,1]")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=0.0005)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--min-delta", type=float, default=0.01)
    p.add_argument("--precision", choices=["f64", "f32"], default="f64")
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--keep-last", action="store_true",
                   help="report the final epoch instead of the best-validation epoch")
    p.add_argument("--config", help="JSON/TOML config file; flags win on conflict")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avb",
        description="Vocal-burst affect experiment harness (CCC/UAR multi-task trainer).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature/label pair")
    p.add_argument("--task", required=True, choices=["high", "two", "culture", "type"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--binary", action="store_true", help="write features in AVBF binary")

    p = sub.add_parser("train", help="train a single (feature, task, seed) run")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved config as JSON and exit")

    p = sub.add_parser("sweep", help="run a multi-seed sweep")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seeds", default="0..19", help="range '0..19' or list '0,3,7'")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")

    p = sub.add_parser("compare", help="paired t-test between two run directories")
    p.add_argument("--a", required=True, help="runs/<feature> directory for system A")
    p.add_argument("--b", required=True, help="runs/<feature> directory for system B")
    p.add_argument("--task", required=True, choices=["high", "two", "culture", "type"])
    p.add_argument("--out", help="write result JSON here (default: stdout)")

    p = sub.add_parser("predict", help="predict from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate sweep manifests into report files")
    p.add_argument("--runs", required=True, help="directory containing runs/<feature>/<task>/")
    p.add_argument("--out", required=True, help="report output directory")
    return parser


def parse_seeds(spec: str) -> list[int]:
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s.strip() != ""]


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        import tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


_CONFIG_FLAG_MAP = {
    "learning_rate": "lr",
    "weight_decay": "weight_decay",
    "batch_size": "batch_size",
    "max_epochs": "epochs",
    "patience": "patience",
    "min_delta": "min_delta",
    "precision": "precision",
    "grad_clip": "grad_clip",
    "seed": "seed",
    "task": "task",
}


def _make_config(args: argparse.Namespace, parser_defaults: dict) -> train_mod.TrainConfig:
    values = {
        "task": args.task,
        "seed": getattr(args, "seed", 0),
        "learning_rate": args.lr,
        "weight_decay": args.weight_decay,
        "batch_size": args.batch_size,
        "max_epochs": args.epochs,
        "patience": args.patience,
        "min_delta": args.min_delta,
        "precision": args.precision,
        "grad_clip": args.grad_clip,
        "keep_best": not args.keep_last,
    }
    if getattr(args, "config", None):
        file_vals = _load_config_file(args.config)
        for key, flag in _CONFIG_FLAG_MAP.items():
            if key in file_vals and getattr(args, flag, None) == parser_defaults.get(flag):
                values[key] = file_vals[key]
    return train_mod.TrainConfig(**values)


def _load_dataset(args) -> dataio.Dataset:
    features = dataio.load_features(args.features)
    labels = dataio.load_labels(args.labels, args.task, scale=args.scale_labels)
    ds = dataio.join_split(features, labels)
    if ds.dropped_feature_ids or ds.dropped_label_ids:
        print(
            f"join dropped {ds.dropped_feature_ids} feature ids and "
            f"{ds.dropped_label_ids} label ids",
            file=sys.stderr,
        )
    return ds


def _cmd_synth(args) -> int:
    feats, labels = dataio.make_synthetic(args.seed, args.n, args.dims, args.task)
    dataio.write_features(feats, args.out_features, binary=args.binary)
    dataio.write_labels(labels, args.out_labels)
    print(f"wrote {len(feats)} rows: {args.out_features}, {args.out_labels}", file=sys.stderr)
    return 0


def _cmd_train(args, defaults) -> int:
    config = _make_config(args, defaults)
    if args.dump_config:
        print(json.dumps(config.to_dict(), sort_keys=True, indent=1))
        return 0
    ds = _load_dataset(args)
    config.feature_name = ds.features.feature_name
    result = train_mod.train_run(ds, config)
    run_dir = experiments.run_dir_for(args.out, config.feature_name, config.task, config.seed)
    train_mod.write_run_artifacts(result, run_dir)
    print(
        f"best val score {result.best_val_score:.4f} at epoch {result.best_epoch} "
        f"({run_dir}/manifest.json)",
        file=sys.stderr,
    )
    return 0


def _cmd_sweep(args, defaults) -> int:
    config = _make_config(args, defaults)
    seeds = parse_seeds(args.seeds)
    ds = _load_dataset(args)
    config.feature_name = ds.features.feature_name
    summary = experiments.run_sweep(ds, config, seeds, args.out, jobs=args.jobs)
    print(
        f"sweep {summary.feature_name}/{summary.task}: max {summary.max_score:.4f}, "
        f"mean {summary.mean_score:.4f} ± {summary.std_score:.4f} "
        f"({len(summary.per_seed_scores)}/{len(seeds)} seeds)",
        file=sys.stderr,
    )
    return 1 if summary.failed_seeds else 0


def _scores_by_seed(run_root: Path, task: str) -> dict[int, float]:
    task_dir = Path(run_root) / task
    scores = {}
    for manifest in sorted(task_dir.glob("*/manifest.json")):
        with open(manifest, encoding="utf-8") as fh:
            data = json.load(fh)
        scores[int(manifest.parent.name)] = data["best_val_score"]
    if not scores:
        raise FileNotFoundError(f"no run manifests under {task_dir}")
    return scores


def _cmd_compare(args) -> int:
    sa = _scores_by_seed(Path(args.a), args.task)
    sb = _scores_by_seed(Path(args.b), args.task)
    common = sorted(set(sa) & set(sb))
    if len(common) < 2:
        raise ValueError("need at least 2 common seeds to compare")
    result = experiments.paired_ttest(
        [sa[s] for s in common], [sb[s] for s in common],
        feature_a=Path(args.a).name, feature_b=Path(args.b).name, task=args.task,
    )
    payload = json.dumps(result.to_dict(), sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return 0


def _cmd_predict(args) -> int:
    params, specs, config = train_mod.load_checkpoint(args.checkpoint)
    features = dataio.load_features(args.features)
    train_mod.predict(params, specs, features, config.task, args.out)
    print(f"wrote predictions for {len(features)} utterances to {args.out}", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    runs_root = Path(args.runs)
    if runs_root.name != "runs" and (runs_root / "runs").is_dir():
        runs_root = runs_root / "runs"
    summaries = []
    missing = False
    for sweep_file in sorted(runs_root.glob("*/*/sweep.json")):
        with open(sweep_file, encoding="utf-8") as fh:
            d = json.load(fh)
        summary = experiments.SweepSummary(
            feature_name=d["feature_name"],
            task=d["task"],
            per_seed_scores={int(k): v for k, v in d["per_seed_scores"].items()},
            failed_seeds={int(k): v for k, v in d["failed_seeds"].items()},
            max_score=d["max_score"],
            mean_score=d["mean_score"],
            std_score=d["std_score"],
        )
        missing = missing or bool(summary.failed_seeds)
        summaries.append(summary)
    if not summaries:
        raise FileNotFoundError(f"no sweep.json files under {runs_root}")
    experiments.build_report(summaries, [], args.out)
    print(f"report written under {Path(args.out) / 'report'}", file=sys.stderr)
    return 1 if missing else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # defaults needed to let config-file values through only for untouched flags
    defaults = {
        a.dest: a.default
        for sp in parser._subparsers._group_actions[0].choices.values()
        for a in sp._actions
    }
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train":
            return _cmd_train(args, defaults)
        if args.command == "sweep":
            return _cmd_sweep(args, defaults)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "predict":
            return _cmd_predict(args)
        if args.command == "report":
            return _cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except (DataError, DivergenceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface for the pipeline.

Subcommands: prep, split, baseline, eval, layer-study, inspect. Every
knob is a config key with a fixed default; values resolve as
flags > config file > POLLENSTACK_SEED (seed only) > defaults. Exit
codes: 1 input error, 2 config error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baseline_clf, canonicalize, dataset_kit, eval_kit, focus_select, stack_core

EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

ENV_SEED = "POLLENSTACK_SEED"


class ConfigError(Exception):
    """Bad config file, unknown key, or settings the data cannot satisfy."""


@dataclasses.dataclass
class PipelineConfig:
    folds: int = 10
    epochs: int = 30
    learning_rate: float = 0.0001
    augment_threshold: float = 0.5
    layers: int = 6
    train_batch: int = 16
    val_batch: int = 16
    seed: int = 0
    test_fraction: float = 0.10
    pool_grid: int = 16
    pad_mode: str = "layer"
    layout: str = "by-dir"
    canny_sigma: float = 1.4
    canny_kernel: int = 5
    canny_quantile: float = 0.90
    canny_ratio: float = 0.5
    workers: int = 0  # 0 = all available cores

    def canny_params(self) -> focus_select.CannyParams:
        return focus_select.CannyParams(
            gaussian_sigma=self.canny_sigma,
            gaussian_kernel=self.canny_kernel,
            high_threshold_quantile=self.canny_quantile,
            low_high_ratio=self.canny_ratio)

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if os.environ.get(ENV_SEED):
        try:
            cfg.seed = int(os.environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        for key, value in parse_config_text(path.read_text(encoding="utf-8")).items():
            setattr(cfg, key, value)
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    return cfg


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file of 'key = value' lines")
    defaults = PipelineConfig()
    for f in dataclasses.fields(PipelineConfig):
        kind = {"int": int, "float": float}.get(f.type, str)
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            type=kind, default=None, metavar=f.type.upper(),
                            help=f"{f.name} (default {getattr(defaults, f.name)})")


def _prep_one(record: stack_core.ManifestRecord, cfg: PipelineConfig):
    """Load -> focal select -> window -> canonicalize, for one stack."""
    stack = stack_core.load_stack(record)
    profile = focus_select.profile_stack(stack, cfg.layers, cfg.canny_params())
    sample = canonicalize.canonicalize_stack(
        stack, profile.window, pad_mode=cfg.pad_mode,
        focal_index=profile.focal_index)
    return sample, profile.focal_index


def _prep_worker(payload):
    record, cfg = payload
    return _prep_one(record, cfg)


def _prepare_samples(manifest: stack_core.DatasetManifest, cfg: PipelineConfig):
    min_depth = min(rec.depth for rec in manifest.records)
    if cfg.layers > min_depth:
        raise ConfigError("window exceeds stack depth "
                          f"(layers={cfg.layers}, shallowest stack has {min_depth})")
    workers = cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)
    if workers == 1 or len(manifest.records) < 2:
        results = [_prep_one(rec, cfg) for rec in manifest.records]
    else:
        payloads = [(rec, cfg) for rec in manifest.records]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_prep_worker, payloads))
    # scheduling-order independence: everything downstream is sorted by id
    results.sort(key=lambda pair: pair[0].id)
    return [s for s, _ in results], {s.id: f for s, f in results}


def _print_prep_summary(manifest, focal_by_id, out) -> None:
    counts = manifest.class_counts()
    print("class counts:")
    for label in stack_core.CLASS_LABELS:
        print(f"  {label.name}: {counts[label.id]}")
    histogram = {}
    for focal in focal_by_id.values():
        histogram[focal] = histogram.get(focal, 0) + 1
    print("focal index histogram:")
    for focal in sorted(histogram):
        print(f"  {focal}: {histogram[focal]}")
    print(f"packed dataset written to {out}")


def cmd_prep(args) -> int:
    cfg = resolve_config(args)
    manifest, errors = stack_core.ingest_directory(args.root, layout=cfg.layout)
    for err in errors:
        print(f"skipped: {err}", file=sys.stderr)
    samples, focal_by_id = _prepare_samples(manifest, cfg)
    plan = dataset_kit.make_split(manifest, cfg.seed,
                                  test_fraction=cfg.test_fraction, k=cfg.folds)
    dataset_kit.pack(samples, plan, args.out)
    _print_prep_summary(manifest, focal_by_id, args.out)
    return 0


def cmd_split(args) -> int:
    cfg = resolve_config(args)
    manifest, errors = stack_core.ingest_directory(args.root, layout=cfg.layout)
    for err in errors:
        print(f"skipped: {err}", file=sys.stderr)
    plan = dataset_kit.make_split(manifest, cfg.seed,
                                  test_fraction=cfg.test_fraction, k=cfg.folds)
    dataset_kit.write_split(plan, args.out)
    print(f"split plan written to {args.out}")
    return 0


def _train_fold(dataset, fold: int, cfg: PipelineConfig):
    train_ids, val_ids, test_ids = dataset_kit.fold_roles(dataset.split, fold)
    train_cfg = baseline_clf.TrainConfig(
        learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        batch_size=cfg.train_batch, seed=cfg.seed, p_flip=cfg.augment_threshold)
    spec = baseline_clf.FeatureSpec(pool_grid=cfg.pool_grid)
    model, spec, log = baseline_clf.train(dataset, train_ids, val_ids, train_cfg, spec)
    return model, spec, log, (train_ids, val_ids, test_ids)


def _prediction_metadata(dataset, fold, cfg, log) -> dict:
    seconds = float(np.mean([s.seconds for s in log])) if log else 0.0
    return {"model": "baseline_logreg", "fold": fold, "epochs": cfg.epochs,
            "pretrained": "false", "seconds_per_epoch": f"{seconds:.3f}",
            "layers": dataset.records[0].n_layers}


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    dataset = dataset_kit.read_packed(args.dataset)
    if not 0 <= args.fold < dataset.split.k:
        raise ConfigError(f"fold {args.fold} outside [0, {dataset.split.k})")
    model, spec, log, (train_ids, val_ids, test_ids) = _train_fold(dataset, args.fold, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = _prediction_metadata(dataset, args.fold, cfg, log)

    for name, ids in (("val", val_ids), ("test", test_ids)):
        pred = baseline_clf.predict(model, dataset, ids, spec,
                                    dict(metadata, split=name))
        eval_kit.write_predictions(pred, out_dir / f"fold{args.fold}_{name}_predictions.tsv")
    (out_dir / f"fold{args.fold}_epochs.tsv").write_text(
        baseline_clf.epoch_log_tsv(log), encoding="utf-8")
    print(f"fold {args.fold}: trained {cfg.epochs} epochs on {len(train_ids)} samples; "
          f"outputs in {out_dir}")
    return 0


def _truth_from(path_text: str) -> dict:
    dataset = dataset_kit.read_packed(path_text)
    return dataset.truth()


def _row_label(pred: eval_kit.PredictionSet, style: str, fallback: str) -> str:
    meta = pred.metadata
    if style == "layers":
        return f"{meta.get('layers', '?')} layers"
    if style == "epochs":
        return f"{meta.get('epochs', '?')} epochs"
    label = meta.get("model", fallback)
    if meta.get("pretrained", "").lower() in ("true", "1", "yes"):
        label += "*"
    return label


def cmd_eval(args) -> int:
    truth = _truth_from(args.truth)
    rows = []
    reports = []
    for pred_path in args.predictions:
        pred = eval_kit.parse_predictions(pred_path)
        report = eval_kit.score(pred, truth)
        rows.append((_row_label(pred, args.style, Path(pred_path).stem), report))
        reports.append(report)
    table = eval_kit.render_table(rows, args.style)
    print(table, end="")
    if args.cv and len(reports) > 1:
        print("cross-validation (mean +/- sd):")
        for name, (mean, sd) in eval_kit.aggregate_cv(reports).items():
            print(f"  {name}: {mean:.3f} +/- {sd:.3f}")
    if args.tsv:
        Path(args.tsv).write_text(eval_kit.metrics_tsv(rows), encoding="utf-8")
        print(f"metrics tsv written to {args.tsv}")
    return 0


def cmd_layer_study(args) -> int:
    cfg = resolve_config(args)
    if any(n < 1 for n in args.layer_list):
        raise ConfigError("layer counts must be >= 1")
    manifest, errors = stack_core.ingest_directory(args.root, layout=cfg.layout)
    for err in errors:
        print(f"skipped: {err}", file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in args.layer_list:
        run_cfg = dataclasses.replace(cfg, layers=n)
        samples, _ = _prepare_samples(manifest, run_cfg)
        plan = dataset_kit.make_split(manifest, run_cfg.seed,
                                      test_fraction=run_cfg.test_fraction,
                                      k=run_cfg.folds)
        prefix = out_dir / f"layers{n}"
        dataset = dataset_kit.pack(samples, plan, prefix)
        model, spec, log, (_, _, test_ids) = _train_fold(dataset, 0, run_cfg)
        metadata = _prediction_metadata(dataset, 0, run_cfg, log)
        pred = baseline_clf.predict(model, dataset, test_ids, spec, metadata)
        pred_path = out_dir / f"layers{n}_test_predictions.tsv"
        eval_kit.write_predictions(pred, pred_path)
        report = eval_kit.score(eval_kit.parse_predictions(pred_path), dataset.truth())
        rows.append((f"{n} layers", report))
    table = eval_kit.render_table(rows, "layers")
    print(table, end="")
    (out_dir / "layer_study.tsv").write_text(eval_kit.metrics_tsv(rows), encoding="utf-8")
    return 0


def cmd_inspect(args) -> int:
    cfg = resolve_config(args)
    manifest, errors = stack_core.ingest_directory(args.root, layout=cfg.layout)
    for err in errors:
        print(f"skipped: {err}", file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = cfg.canny_params()
    for record in manifest.records:
        stack = stack_core.load_stack(record)
        profile = focus_select.select_focal(stack, params)
        safe = record.id.replace("/", "__")
        (out_dir / f"{safe}.profile.tsv").write_text(
            focus_select.dump_profile(record.id, profile), encoding="utf-8")
        if args.edge_masks:
            from PIL import Image
            _, mask = focus_select.canny_edges(
                stack.layers[profile.focal_index], params)
            Image.fromarray((mask * np.uint8(255))).save(out_dir / f"{safe}.edges.png")
    print(f"profiles for {len(manifest)} stacks written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pollenstack",
        description="z-stack pollen pipeline: focal selection, packaging, "
                    "baseline training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="ingest stacks, select focal windows, pack dataset")
    p.add_argument("root", help="dataset root (directory-per-class tree)")
    p.add_argument("--out", required=True, help="output dataset prefix (.pstk)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("split", help="compute and write a split plan only")
    p.add_argument("root")
    p.add_argument("--out", required=True, help="output split .tsv path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("baseline", help="train the logistic-regression baseline on one fold")
    p.add_argument("dataset", help="packed dataset prefix (.pstk)")
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score prediction files and render report tables")
    p.add_argument("predictions", nargs="+", help="prediction .tsv files")
    p.add_argument("--truth", required=True, help="packed dataset prefix with true labels")
    p.add_argument("--style", choices=("layers", "epochs", "models"), default="models")
    p.add_argument("--cv", action="store_true", help="also print mean/sd across files")
    p.add_argument("--tsv", help="write machine-readable metrics here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("layer-study", help="baseline metrics for several layer counts")
    p.add_argument("root")
    p.add_argument("--layer-list", nargs="+", type=int, required=True,
                   metavar="N", help="layer counts, e.g. --layer-list 4 6 8 10 20")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_layer_study)

    p = sub.add_parser("inspect", help="dump per-stack focus profiles")
    p.add_argument("root")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--edge-masks", action="store_true",
                   help="also write focal-layer edge masks as PNG")
    _add_config_flags(p)
    p.set_defaults(func=cmd_inspect)
    return parser


_INPUT_ERRORS = (stack_core.IngestError, stack_core.LoadError,
                 dataset_kit.DatasetFormatError, dataset_kit.PackError,
                 eval_kit.PredictionFormatError, eval_kit.ScoreError,
                 FileNotFoundError)
_CONFIG_ERRORS = (ConfigError, dataset_kit.SplitError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

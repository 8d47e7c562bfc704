"""Command-line trainer for packed pollen z-stacks.

Subcommands: train (fine-tune one fold, write checkpoint, epoch log and
prediction files) and show-config (print the settings a train run would
use). Training knobs mirror the preprocessing pipeline's config keys
and resolve the same way: flags > config file > POLLENTRAIN_SEED (seed
only) > architecture defaults. Exit codes: 1 input error, 2 config
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import models, packed_io, train_loop

EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

ENV_SEED = "POLLENTRAIN_SEED"


class ConfigError(Exception):
    """Bad config file, unknown key, or settings the data cannot satisfy."""


# training knobs shared with the preprocessing pipeline's config surface
_CONFIG_FIELDS = {"epochs": int, "learning_rate": float,
                  "augment_threshold": float, "train_batch": int,
                  "val_batch": int, "seed": int}


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
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_FIELDS[key](value)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None
    return values


def resolve_settings(args) -> models.TrainSettings:
    if args.arch not in models.ARCHITECTURES:
        raise ConfigError(f"unknown architecture {args.arch!r} "
                          f"(choose from {', '.join(models.ARCHITECTURES)})")
    settings = models.default_settings(args.arch, args.pretrained)
    if os.environ.get(ENV_SEED):
        try:
            settings.seed = int(os.environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        for key, value in parse_config_text(path.read_text(encoding="utf-8")).items():
            setattr(settings, key, value)
    for key in _CONFIG_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(settings, key, flag)
    settings.weights_path = getattr(args, "weights", None)
    return settings


def settings_text(settings: models.TrainSettings) -> str:
    pairs = [("architecture", settings.architecture),
             ("pretrained", str(settings.pretrained).lower())]
    pairs += [(key, getattr(settings, key)) for key in _CONFIG_FIELDS]
    if settings.weights_path:
        pairs.append(("weights", settings.weights_path))
    return "\n".join(f"{key} = {value}" for key, value in pairs) + "\n"


def cmd_show_config(args) -> int:
    print(settings_text(resolve_settings(args)), end="")
    return 0


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    view = packed_io.load_packed(args.dataset)
    if not 0 <= args.fold < view.split.k:
        raise ConfigError(f"fold {args.fold} outside [0, {view.split.k})")
    result = train_loop.train_model(view, args.fold, settings, args.out)
    last = result.rows[-1]
    print(f"fold {args.fold}: {result.epochs_run} epochs, "
          f"final train_loss {last.train_loss:.6f}, "
          f"val_acc {last.val_accuracy:.6f}")
    for name in ("val", "test"):
        print(f"{name} predictions: {result.prediction_files[name]}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", default="resnet3d_18",
                        help="model architecture "
                             f"(choose from {', '.join(models.ARCHITECTURES)})")
    parser.add_argument("--pretrained", action="store_true",
                        help="start from published pretrained weights")
    parser.add_argument("--weights", metavar="PATH",
                        help="load initial weights from a local checkpoint")
    parser.add_argument("--config", help="config file of 'key = value' lines")
    for name, kind in _CONFIG_FIELDS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=kind, default=None,
                            metavar=kind.__name__.upper(),
                            help=f"{name} (per-architecture default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pollentrain",
        description="fine-tune 3D models on packed pollen z-stack datasets")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one cross-validation fold")
    p_train.add_argument("dataset", help="packed dataset (.pstk path or basename)")
    p_train.add_argument("--fold", type=int, required=True,
                         help="validation fold index")
    p_train.add_argument("--out", required=True, help="output directory")
    _add_common_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_show = sub.add_parser("show-config",
                            help="print the settings a train run would use")
    _add_common_flags(p_show)
    p_show.set_defaults(func=cmd_show_config)
    return parser


_CONFIG_ERRORS = (ConfigError, models.ModelError)
_INPUT_ERRORS = (packed_io.FormatError, FileNotFoundError)


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
    except train_loop.TrainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

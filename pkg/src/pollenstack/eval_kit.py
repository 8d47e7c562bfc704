"""Scoring of prediction files and plain-text report tables.

The prediction file is the wire format between any trainer and this
evaluator: a leading block of "#key=value" metadata lines, a header row
"id<TAB>p0<TAB>p1<TAB>p2", then one probability row per sample. Scoring
derives loss / accuracy / macro F1 / confusion counts; report tables
come in three layout styles (layers, epochs, models) at 3 decimals.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

N_CLASSES = 3
PROB_SUM_TOL = 1e-6
LOG_CLAMP = 1e-12


class PredictionFormatError(Exception):
    """Prediction file violates the wire format."""


class ScoreError(Exception):
    """Predictions cannot be scored against the given truth."""


@dataclasses.dataclass
class PredictionSet:
    rows: list  # (sample_id, (p0, p1, p2))
    metadata: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        ids = [r[0] for r in self.rows]
        if len(set(ids)) != len(ids):
            raise PredictionFormatError("duplicate ids in prediction set")


@dataclasses.dataclass
class EvalReport:
    loss: float
    accuracy: float
    macro_f1: float
    confusion: np.ndarray  # [true][pred] counts
    support: tuple
    seconds_per_epoch: float | None = None

    def metrics(self) -> dict:
        return {"loss": self.loss, "accuracy": self.accuracy,
                "macro_f1": self.macro_f1}


def _validate_row(sample_id: str, probs, where: str):
    probs = tuple(float(p) for p in probs)
    if len(probs) != N_CLASSES:
        raise PredictionFormatError(f"{where}: expected {N_CLASSES} probabilities")
    if any(p < 0 for p in probs):
        raise PredictionFormatError(f"{where}: negative probability for {sample_id!r}")
    if abs(sum(probs) - 1.0) > PROB_SUM_TOL:
        raise PredictionFormatError(
            f"{where}: probabilities for {sample_id!r} sum to {sum(probs):.8f}")
    return probs


def write_predictions(pred: PredictionSet, path) -> None:
    lines = [f"#{k}={pred.metadata[k]}" for k in sorted(pred.metadata)]
    lines.append("id\tp0\tp1\tp2")
    for sample_id, probs in pred.rows:
        lines.append(sample_id + "\t" + "\t".join(f"{p:.9f}" for p in probs))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_predictions(path) -> PredictionSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    metadata = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            metadata[key.strip()] = value.strip()
            continue
        body_start = i
        break
    else:
        raise PredictionFormatError(f"{path}: no header row")
    if lines[body_start] != "id\tp0\tp1\tp2":
        raise PredictionFormatError(
            f"{path}:{body_start + 1}: bad header {lines[body_start]!r}")
    rows = []
    for lineno, line in enumerate(lines[body_start + 1:], start=body_start + 2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 1 + N_CLASSES:
            raise PredictionFormatError(f"{path}:{lineno}: expected 4 fields")
        try:
            probs = tuple(float(f) for f in fields[1:])
        except ValueError:
            raise PredictionFormatError(
                f"{path}:{lineno}: non-numeric probability") from None
        rows.append((fields[0], _validate_row(fields[0], probs, f"{path}:{lineno}")))
    return PredictionSet(rows, metadata)


def _argmax_label(probs) -> int:
    # ties break toward the lowest class id
    best = 0
    for c in range(1, N_CLASSES):
        if probs[c] > probs[best]:
            best = c
    return best


def score(pred: PredictionSet, truth: dict) -> EvalReport:
    """Score a prediction set against id -> true-label-id truth.

    Predicted label is the argmax probability (ties -> lowest class id);
    loss is mean negative log of the true-class probability with a 1e-12
    clamp; macro F1 averages per-class F1 unweighted, scoring 0 for a
    class whose precision and recall are both undefined-or-zero.
    """
    if not pred.rows:
        raise ScoreError("empty prediction set")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    losses = []
    for sample_id, probs in pred.rows:
        probs = _validate_row(sample_id, probs, "row")
        if sample_id not in truth:
            raise ScoreError(f"id {sample_id!r} missing from truth")
        true = int(truth[sample_id])
        confusion[true][_argmax_label(probs)] += 1
        losses.append(-math.log(max(probs[true], LOG_CLAMP)))

    total = int(confusion.sum())
    # summing in sorted order keeps the loss bit-identical under any
    # permutation of the prediction rows
    mean_loss = math.fsum(sorted(losses)) / len(losses)
    accuracy = float(np.trace(confusion)) / total
    f1s = []
    for c in range(N_CLASSES):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom > 0 else 0.0)
    seconds = pred.metadata.get("seconds_per_epoch")
    return EvalReport(loss=mean_loss,
                      accuracy=accuracy,
                      macro_f1=float(np.mean(f1s)),
                      confusion=confusion,
                      support=tuple(int(s) for s in confusion.sum(axis=1)),
                      seconds_per_epoch=float(seconds) if seconds not in (None, "") else None)


def aggregate_cv(reports) -> dict:
    """Unweighted mean and population SD of each metric across folds."""
    reports = list(reports)
    if not reports:
        raise ScoreError("no reports to aggregate")
    out = {}
    for name in ("loss", "accuracy", "macro_f1"):
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = (float(values.mean()), float(values.std()))
    seconds = [r.seconds_per_epoch for r in reports]
    if all(s is not None for s in seconds):
        values = np.array(seconds, dtype=np.float64)
        out["seconds_per_epoch"] = (float(values.mean()), float(values.std()))
    return out


_STYLE_FIRST = {"layers": "Layers", "epochs": "Epochs", "models": "Model"}


def render_table(rows, style: str) -> str:
    """Text table in the fixed layout for the given style.

    rows are (label, EvalReport); metric cells print to 3 decimals. The
    layers style appends a Time column (seconds per epoch, whole seconds,
    blank when unmeasured). Pre-trained labels arrive already starred.
    """
    if style not in _STYLE_FIRST:
        raise ValueError(f"unknown table style {style!r}")
    if not rows:
        raise ValueError("no rows to render")
    header = [_STYLE_FIRST[style], "loss", "F1-score", "accuracy"]
    with_time = style == "layers"
    if with_time:
        header.append("Time")
    table = [header]
    for label, report in rows:
        cells = [str(label), f"{report.loss:.3f}", f"{report.macro_f1:.3f}",
                 f"{report.accuracy:.3f}"]
        if with_time:
            cells.append("" if report.seconds_per_epoch is None
                         else f"{report.seconds_per_epoch:.0f}")
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines) + "\n"


def metrics_tsv(rows) -> str:
    """Machine-readable companion to the text tables."""
    lines = ["label\tloss\tmacro_f1\taccuracy\tseconds_per_epoch"]
    for label, report in rows:
        seconds = "" if report.seconds_per_epoch is None \
            else f"{report.seconds_per_epoch:.3f}"
        lines.append(f"{label}\t{report.loss:.6f}\t{report.macro_f1:.6f}"
                     f"\t{report.accuracy:.6f}\t{seconds}")
    return "\n".join(lines) + "\n"

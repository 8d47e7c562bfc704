"""Fine-tuning loop over a packed dataset fold.

One call to train_model runs the whole protocol: per-epoch shuffled
training with deterministic flip augmentation, validation after every
epoch on untouched tensors, an epoch log with timings, a checkpoint,
and prediction files for the validation and test splits in the
evaluator's wire format.

Every validation row carries a digest of the exact float tensors fed
to the model that epoch. Augmentation is keyed to the training split
only, so the digest must repeat verbatim across epochs; a changing
digest is direct evidence that augmentation (or any other
nondeterminism) leaked into evaluation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import time
from pathlib import Path

import torch
from torch import nn

from . import models, packed_io, stream

PREDICTION_HEADER = "id\tp0\tp1\tp2"


class TrainerError(Exception):
    """Training could not run or diverged (non-finite loss)."""


@dataclasses.dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float
    val_digest: str


@dataclasses.dataclass
class TrainResult:
    rows: list
    epochs_run: int
    final_train_accuracy: float | None
    checkpoint: Path
    prediction_files: dict


def epoch_log_tsv(rows) -> str:
    lines = ["epoch\ttrain_loss\tval_loss\tval_acc\tseconds\tval_digest"]
    for r in rows:
        lines.append(f"{r.epoch}\t{r.train_loss:.6f}\t{r.val_loss:.6f}"
                     f"\t{r.val_accuracy:.6f}\t{r.seconds:.3f}\t{r.val_digest}")
    return "\n".join(lines) + "\n"


def write_predictions(rows, metadata: dict, path) -> None:
    lines = [f"#{k}={metadata[k]}" for k in sorted(metadata)]
    lines.append(PREDICTION_HEADER)
    for sample_id, probs in rows:
        lines.append(sample_id + "\t" + "\t".join(f"{p:.9f}" for p in probs))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _chunks(items, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _batch(view: packed_io.PackedView, ids, epoch: int,
           settings: models.TrainSettings, augmented: bool) -> torch.Tensor:
    tensors = []
    for sample_id in ids:
        raw = view.load_tensor(sample_id)
        if augmented:
            raw = stream.augment(raw, settings.seed, sample_id, epoch,
                                 settings.augment_threshold)
        tensors.append(packed_io.to_model_input(raw))
    return torch.stack(tensors)


def _evaluate(model: nn.Module, view: packed_io.PackedView, ids,
              settings: models.TrainSettings, batch_size: int):
    """(mean loss, accuracy, input digest) over ids in sorted order,
    without augmentation. Empty id lists give NaN scores."""
    loss_fn = nn.CrossEntropyLoss(reduction="sum")
    digest = hashlib.blake2b(digest_size=16)
    ordered = sorted(ids)
    total_loss, correct = 0.0, 0
    model.eval()
    with torch.no_grad():
        for chunk in _chunks(ordered, batch_size):
            x = _batch(view, chunk, 0, settings, augmented=False)
            digest.update(x.numpy().tobytes())
            y = torch.tensor([view.label_of(i) for i in chunk])
            logits = model(x)
            total_loss += float(loss_fn(logits, y))
            correct += int((logits.argmax(dim=1) == y).sum())
    n = len(ordered)
    if n == 0:
        return math.nan, math.nan, digest.hexdigest()
    return total_loss / n, correct / n, digest.hexdigest()


def _predict_rows(model: nn.Module, view: packed_io.PackedView, ids,
                  settings: models.TrainSettings, batch_size: int):
    rows = []
    model.eval()
    with torch.no_grad():
        for chunk in _chunks(sorted(ids), batch_size):
            x = _batch(view, chunk, 0, settings, augmented=False)
            probs = torch.softmax(model(x), dim=1)
            for sample_id, p in zip(chunk, probs):
                rows.append((sample_id, tuple(float(v) for v in p)))
    return rows


def train_model(view: packed_io.PackedView, fold: int,
                settings: models.TrainSettings, out_dir) -> TrainResult:
    """Train one fold end to end and write its artifacts into out_dir."""
    train_ids, val_ids, test_ids = view.split.fold_members(fold)
    if not train_ids:
        raise TrainerError(f"fold {fold} leaves no training samples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / f"fold{fold}_epochs.tsv"

    torch.manual_seed(settings.seed)
    model = models.build_model(settings)
    optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
    loss_fn = nn.CrossEntropyLoss()

    rows = []
    final_train_accuracy = None
    for epoch in range(settings.epochs):
        started = time.perf_counter()
        order = stream.epoch_order(train_ids, settings.seed, epoch)
        model.train()
        running = 0.0
        for chunk in _chunks(order, settings.train_batch):
            x = _batch(view, chunk, epoch, settings, augmented=True)
            y = torch.tensor([view.label_of(i) for i in chunk])
            optimizer.zero_grad()
            loss = loss_fn(model(x), y)
            loss.backward()
            optimizer.step()
            running += float(loss.detach()) * len(chunk)
        train_loss = running / len(train_ids)
        if not math.isfinite(train_loss):
            log_path.write_text(epoch_log_tsv(rows), encoding="utf-8")
            raise TrainerError(f"non-finite loss at epoch {epoch}; "
                               f"log written to {log_path}")

        val_loss, val_accuracy, val_digest = _evaluate(
            model, view, val_ids, settings, settings.val_batch)
        rows.append(EpochRow(epoch, train_loss, val_loss, val_accuracy,
                             time.perf_counter() - started, val_digest))

        if settings.target_train_accuracy is not None:
            _, train_accuracy, _ = _evaluate(
                model, view, train_ids, settings, settings.val_batch)
            final_train_accuracy = train_accuracy
            if train_accuracy >= settings.target_train_accuracy:
                break

    log_path.write_text(epoch_log_tsv(rows), encoding="utf-8")
    checkpoint = out_dir / f"fold{fold}_model.pt"
    torch.save(model.state_dict(), checkpoint)

    seconds = sum(r.seconds for r in rows) / len(rows) if rows else 0.0
    metadata = {"model": settings.architecture, "fold": fold,
                "epochs": len(rows),
                "pretrained": "true" if settings.pretrained else "false",
                "seconds_per_epoch": f"{seconds:.3f}",
                "layers": view.n_layers}
    prediction_files = {}
    for name, ids in (("val", val_ids), ("test", test_ids)):
        path = out_dir / f"fold{fold}_{name}_predictions.tsv"
        write_predictions(_predict_rows(model, view, ids, settings,
                                        settings.val_batch),
                          dict(metadata, split=name), path)
        prediction_files[name] = path
    return TrainResult(rows=rows, epochs_run=len(rows),
                       final_train_accuracy=final_train_accuracy,
                       checkpoint=checkpoint, prediction_files=prediction_files)

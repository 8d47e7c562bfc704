"""Multinomial logistic regression on pooled voxel features.

A deliberately small reference classifier: each canonical layer is
block-average-pooled to a coarse grid, layers concatenate into one
feature vector, and a softmax linear model trains by mini-batch gradient
descent. It exercises every pipeline surface (focal windows, padding,
splits, packaging, prediction files) while staying exactly
gradient-checkable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import time

import numpy as np

from .canonicalize import CANONICAL, AugmentConfig, augment_tensor
from .dataset_kit import PackedDataset
from .eval_kit import N_CLASSES, PredictionSet

STANDARDIZE_EPS = 1e-8


class TrainError(Exception):
    """Training cannot proceed (empty split, divergence, ...)."""


@dataclasses.dataclass
class FeatureSpec:
    """Pooling grid plus per-feature standardization statistics.

    mean/sd stay None until fit on the training split; featurize returns
    raw pooled values before that and standardized values after.
    """

    pool_grid: int = 16
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None


@dataclasses.dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    p_flip: float = 0.5


@dataclasses.dataclass
class LinearModel:
    weights: np.ndarray  # (3, n_features)
    bias: np.ndarray     # (3,)
    config: TrainConfig


def pool_tensor(tensor: np.ndarray, pool_grid: int) -> np.ndarray:
    """Non-overlapping block means per layer, flattened (layer, row, col).

    Block sums run in exact integer arithmetic before the single float
    division, so results are independent of summation order.
    """
    n, h, w = tensor.shape
    if h % pool_grid or w % pool_grid:
        raise ValueError(f"{h}x{w} not divisible by pool grid {pool_grid}")
    bh, bw = h // pool_grid, w // pool_grid
    sums = (tensor.astype(np.int64)
            .reshape(n, pool_grid, bh, pool_grid, bw)
            .sum(axis=(2, 4)))
    return (sums / float(bh * bw)).ravel()


def featurize(tensor: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    features = pool_tensor(tensor, spec.pool_grid)
    if spec.fitted:
        features = (features - spec.mean) / spec.sd
    return features


def fit_standardizer(features: np.ndarray, spec: FeatureSpec) -> FeatureSpec:
    """Learn per-feature mean/SD from a (samples, features) matrix."""
    return FeatureSpec(pool_grid=spec.pool_grid,
                       mean=features.mean(axis=0),
                       sd=features.std(axis=0) + STANDARDIZE_EPS)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def loss_and_grad(weights, bias, features, labels):
    """Mean softmax cross-entropy and its analytic gradients for a batch."""
    logits = features @ weights.T + bias
    probs = softmax(logits)
    n = features.shape[0]
    loss = float(-np.log(np.clip(probs[np.arange(n), labels], 1e-300, None)).mean())
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    grad_w = delta.T @ features / n
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def _shuffle_stream(seed: int, epoch: int) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}|shuffle|{epoch}".encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def _gather(dataset: PackedDataset, ids):
    tensors = [dataset.load_tensor(sample_id) for sample_id in ids]
    labels = np.array([dataset.record(sample_id).label_id for sample_id in ids])
    return tensors, labels


@dataclasses.dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


def train(dataset: PackedDataset, train_ids, val_ids,
          cfg: TrainConfig = TrainConfig(),
          spec: FeatureSpec = FeatureSpec()):
    """Fit the linear model on the training split.

    Flip augmentation (keyed by sample id and epoch) applies to training
    samples only; validation tensors pass through untouched every epoch.
    Standardization statistics come from the unaugmented training pool.
    Returns (model, fitted_spec, per-epoch stats).
    """
    train_ids, val_ids = list(train_ids), list(val_ids)
    if not train_ids:
        raise TrainError("empty training split")
    train_tensors, train_labels = _gather(dataset, train_ids)
    val_tensors, val_labels = _gather(dataset, val_ids)

    raw = np.stack([pool_tensor(t, spec.pool_grid) for t in train_tensors])
    spec = fit_standardizer(raw, spec)
    val_x = np.stack([featurize(t, spec) for t in val_tensors]) if val_ids else None

    n_features = raw.shape[1]
    weights = np.zeros((N_CLASSES, n_features))
    bias = np.zeros(N_CLASSES)
    aug = AugmentConfig(p_flip=cfg.p_flip, seed=cfg.seed)

    log = []
    order = np.arange(len(train_ids))
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        _shuffle_stream(cfg.seed, epoch).shuffle(order)
        batch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            feats = np.stack([
                featurize(augment_tensor(train_tensors[i], train_ids[i], aug, epoch), spec)
                for i in batch])
            loss, grad_w, grad_b = loss_and_grad(weights, bias, feats, train_labels[batch])
            if not np.isfinite(loss):
                raise TrainError(f"non-finite loss at epoch {epoch}; "
                                 f"lower the learning rate ({cfg.learning_rate})")
            weights -= cfg.learning_rate * grad_w
            bias -= cfg.learning_rate * grad_b
            batch_losses.append(loss)

        if val_x is not None and len(val_ids):
            val_loss, _, _ = loss_and_grad(weights, bias, val_x, val_labels)
            val_probs = softmax(val_x @ weights.T + bias)
            val_acc = float((val_probs.argmax(axis=1) == val_labels).mean())
        else:
            val_loss, val_acc = float("nan"), float("nan")
        log.append(EpochStats(epoch, float(np.mean(batch_losses)),
                              val_loss, val_acc,
                              time.perf_counter() - started))
    return LinearModel(weights, bias, cfg), spec, log


def predict(model: LinearModel, dataset: PackedDataset, ids,
            spec: FeatureSpec, metadata: dict | None = None) -> PredictionSet:
    """Softmax probabilities for the given ids; rows sum to 1 within 1e-9."""
    if not spec.fitted:
        raise TrainError("feature spec has no standardization statistics")
    rows = []
    for sample_id in ids:
        features = featurize(dataset.load_tensor(sample_id), spec)
        probs = softmax((features @ model.weights.T + model.bias)[None, :])[0]
        probs = probs / probs.sum()
        rows.append((sample_id, tuple(float(p) for p in probs)))
    return PredictionSet(rows, dict(metadata or {}))


def epoch_log_tsv(log) -> str:
    lines = ["epoch\ttrain_loss\tval_loss\tval_acc\tseconds"]
    for s in log:
        lines.append(f"{s.epoch}\t{s.train_loss:.6f}\t{s.val_loss:.6f}"
                     f"\t{s.val_accuracy:.6f}\t{s.seconds:.3f}")
    return "\n".join(lines) + "\n"

"""Deterministic per-epoch sample streams.

Augmentation draws are counter-based rather than sequential: each
(seed, sample id, epoch) triple hashes to its own Philox key, so the
flip decisions for a sample are independent of batch composition,
worker count, and visiting order. Replaying an epoch replays its
exact augmentations. The epoch shuffle uses the same construction
with a reserved "shuffle" tag in place of the sample id.
"""

from __future__ import annotations

import hashlib

import numpy as np

# axis indices within a (n_layers, height, width) tensor
_HORIZONTAL_AXIS = 2
_VERTICAL_AXIS = 1


def _philox(seed: int, tag: str, epoch: int) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}|{tag}|{epoch}".encode("utf-8"),
                             digest_size=16).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=key))


def flip_draws(seed: int, sample_id: str, epoch: int) -> tuple:
    """Two uniform [0, 1) draws deciding (horizontal, vertical) flips."""
    u = _philox(seed, sample_id, epoch).random(2)
    return float(u[0]), float(u[1])


def augment(tensor: np.ndarray, seed: int, sample_id: str, epoch: int,
            threshold: float) -> np.ndarray:
    """Apply the sample's flips for this epoch; returns a copy only when
    a flip fires."""
    u_h, u_v = flip_draws(seed, sample_id, epoch)
    out = tensor
    if u_h < threshold:
        out = np.flip(out, axis=_HORIZONTAL_AXIS)
    if u_v < threshold:
        out = np.flip(out, axis=_VERTICAL_AXIS)
    return np.ascontiguousarray(out)


def epoch_order(ids, seed: int, epoch: int) -> list:
    """Deterministic shuffle of the training ids for one epoch."""
    order = sorted(ids)
    _philox(seed, "shuffle", epoch).shuffle(order)
    return order

"""Canonical 224x224 tensors: mean-value padding and flip augmentation.

Stacks keep their native resolution through focal selection; only here
are the selected layers embedded into the fixed model input size. The
padding value is the image's own mean gray so the border introduces no
artificial edges. Augmentation is restricted to horizontal/vertical
flips, applied stack-coherently and drawn from a counter-based random
stream keyed by (seed, sample id, epoch) so outcomes are independent of
iteration order and worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np

from .stack_core import MAX_EDGE, ClassLabel, ZStack

CANONICAL = MAX_EDGE  # 224


@dataclasses.dataclass(frozen=True)
class AugmentConfig:
    p_flip: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError("p_flip must be in [0, 1]")


@dataclasses.dataclass
class CanonicalSample:
    """Fixed-shape training sample: (n_layers, 224, 224) uint8 tensor."""

    id: str
    label: ClassLabel
    tensor: np.ndarray
    provenance: tuple = (None, None)  # (focal_index, (window_start, window_stop))

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor)
        if self.tensor.dtype != np.uint8:
            raise ValueError("canonical tensor must be uint8")
        if self.tensor.ndim != 3 or self.tensor.shape[1:] != (CANONICAL, CANONICAL):
            raise ValueError(
                f"canonical tensor must be (n, {CANONICAL}, {CANONICAL}), "
                f"got {self.tensor.shape}")

    @property
    def n_layers(self) -> int:
        return self.tensor.shape[0]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def pad_to_canonical(layer: np.ndarray, target: int = CANONICAL,
                     pad_value: int | None = None) -> np.ndarray:
    """Embed an h x w layer centered in a target x target frame.

    The frame is filled with the layer's own mean gray value (rounded
    half up) unless an explicit pad_value is given; original pixels are
    copied through untouched.
    """
    layer = np.asarray(layer, dtype=np.uint8)
    if layer.ndim != 2:
        raise ValueError("layer must be 2D")
    h, w = layer.shape
    if h < 1 or w < 1:
        raise ValueError("layer must be nonempty")
    if h > target or w > target:
        raise ValueError(f"layer {h}x{w} exceeds target {target}; reject upstream")
    if pad_value is None:
        pad_value = _round_half_up(int(layer.sum(dtype=np.int64)) / layer.size)
    out = np.full((target, target), np.uint8(pad_value), dtype=np.uint8)
    top = (target - h) // 2
    left = (target - w) // 2
    out[top:top + h, left:left + w] = layer
    return out


def canonicalize_stack(stack: ZStack, window: range, pad_mode: str = "layer",
                       focal_index: int | None = None) -> CanonicalSample:
    """Pad every layer of the selected window to the canonical frame.

    pad_mode "layer" (default) pads each layer with its own mean;
    "stack" uses one mean over the whole window, kept for ablation.
    """
    sub = stack.layers[window.start:window.stop]
    if pad_mode == "layer":
        layers = [pad_to_canonical(layer) for layer in sub]
    elif pad_mode == "stack":
        mean = _round_half_up(int(sub.sum(dtype=np.int64)) / sub.size)
        layers = [pad_to_canonical(layer, pad_value=mean) for layer in sub]
    else:
        raise ValueError(f"unknown pad_mode {pad_mode!r}")
    return CanonicalSample(stack.id, stack.label, np.stack(layers),
                           provenance=(focal_index, (window.start, window.stop)))


_AXES = {"horizontal": 2, "vertical": 1}


def flip(sample: CanonicalSample, axis: str) -> CanonicalSample:
    """Mirror every layer of the stack the same way (stack-coherent)."""
    return CanonicalSample(sample.id, sample.label,
                           flip_tensor(sample.tensor, axis),
                           provenance=sample.provenance)


def flip_tensor(tensor: np.ndarray, axis: str) -> np.ndarray:
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}")
    return np.flip(tensor, axis=_AXES[axis]).copy()


def augment_draws(seed: int, sample_id: str, epoch: int) -> np.ndarray:
    """Two uniform [0,1) variates from a Philox stream keyed by
    (seed, sample id, epoch). The key is hashed so any id text maps to a
    full 128-bit counter key; equal tuples always reproduce the draws.
    """
    digest = hashlib.blake2b(f"{seed}|{sample_id}|{epoch}".encode("utf-8"),
                             digest_size=16).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=key)).random(2)


def augment_tensor(tensor: np.ndarray, sample_id: str, cfg: AugmentConfig,
                   epoch: int) -> np.ndarray:
    u = augment_draws(cfg.seed, sample_id, epoch)
    if u[0] < cfg.p_flip:
        tensor = flip_tensor(tensor, "horizontal")
    if u[1] < cfg.p_flip:
        tensor = flip_tensor(tensor, "vertical")
    return tensor


def augment(sample: CanonicalSample, cfg: AugmentConfig, epoch: int) -> CanonicalSample:
    """Flip-only augmentation; label, id, and shape never change."""
    return CanonicalSample(sample.id, sample.label,
                           augment_tensor(sample.tensor, sample.id, cfg, epoch),
                           provenance=sample.provenance)

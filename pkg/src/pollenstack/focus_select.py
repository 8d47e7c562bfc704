"""Focal-layer selection for z-stacks via Canny edge strength.

Out-of-focus layers carry weak gradients, so the sharpest layer of a
stack is found by scoring every layer with the summed Canny gradient
magnitude over confirmed edge pixels. The classifier input window is
then a contiguous run of layers centered on that focal layer, shifted
(never shrunk) when it would overrun the stack.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy import ndimage

from .stack_core import ZStack


@dataclasses.dataclass(frozen=True)
class CannyParams:
    """Detector knobs. The high threshold is a quantile of the nonzero
    gradient magnitudes so it adapts to per-layer contrast; defocused
    layers have globally weak gradients and would starve a fixed threshold.
    """

    gaussian_sigma: float = 1.4
    gaussian_kernel: int = 5
    high_threshold_quantile: float = 0.90
    low_high_ratio: float = 0.5

    def __post_init__(self):
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be > 0")
        if self.gaussian_kernel < 3 or self.gaussian_kernel % 2 == 0:
            raise ValueError("gaussian_kernel must be an odd integer >= 3")
        if not 0 < self.high_threshold_quantile <= 1:
            raise ValueError("high_threshold_quantile must be in (0, 1]")
        if not 0 < self.low_high_ratio <= 1:
            raise ValueError("low_high_ratio must be in (0, 1]")


@dataclasses.dataclass
class FocusProfile:
    """Per-layer sharpness scores plus the selected focal layer.

    window is filled once a layer count has been chosen; it stays None
    straight after selection.
    """

    scores: np.ndarray
    focal_index: int
    window: range | None = None


def _gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _smooth(layer: np.ndarray, params: CannyParams) -> np.ndarray:
    kernel = _gaussian_kernel(params.gaussian_sigma, params.gaussian_kernel)
    # replicated-edge padding for all convolutions
    return ndimage.correlate(layer, kernel, mode="nearest")


def _sobel(layer: np.ndarray):
    """3x3 Sobel with replicated borders, as explicit neighbor differences.

    The difference form (right minus left, bottom minus top) cancels
    exactly on constant regions, so flat images yield true-zero gradients
    instead of kernel-roundoff noise.
    """
    h, w = layer.shape
    padded = np.pad(layer, 1, mode="edge")

    def at(dy, dx):
        return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    gx = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)
          - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1)))
    gy = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)
          - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1)))
    return gx, gy


def _shift(mag: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Magnitude map translated by (dy, dx); out-of-image neighbors read 0."""
    out = np.zeros_like(mag)
    h, w = mag.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = mag[ys, xs]
    return out


def _nonmax_suppress(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are local maxima along the quantized gradient direction.

    Directions quantize to 4 sectors (0, 45, 90, 135 degrees modulo 180).
    Ties on flat-topped ridges are broken asymmetrically: the magnitude
    must strictly exceed the neighbor on the positive side of the gradient
    and be >= the one on the negative side, so a two-pixel plateau keeps
    exactly one crest pixel instead of both.
    """
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.uint8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3

    # neighbor offsets (dy, dx) per sector, along +/- gradient direction
    neighbors = {
        0: ((0, 1), (0, -1)),
        1: ((1, 1), (-1, -1)),
        2: ((1, 0), (-1, 0)),
        3: ((1, -1), (-1, 1)),
    }
    keep = np.zeros(mag.shape, dtype=bool)
    for s, ((dy1, dx1), (dy2, dx2)) in neighbors.items():
        in_sector = sector == s
        crest = (mag > _shift(mag, dy1, dx1)) & (mag >= _shift(mag, dy2, dx2))
        keep |= in_sector & crest
    suppressed = np.where(keep, mag, 0.0)
    return suppressed


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def canny_edges(layer: np.ndarray, params: CannyParams = CannyParams()):
    """Run the full detector on one grayscale layer.

    Returns (gradient_magnitude, edge_mask). The magnitude map is the
    raw (pre-suppression) Sobel magnitude of the smoothed layer; the
    mask holds pixels confirmed by non-maximum suppression, double
    thresholding, and 8-connected hysteresis.
    """
    layer = np.asarray(layer, dtype=np.float64)
    if layer.ndim != 2 or layer.size == 0:
        raise ValueError("layer must be a nonempty 2D array")
    smoothed = _smooth(layer, params)
    gx, gy = _sobel(smoothed)
    magnitude = np.hypot(gx, gy)

    nonzero = magnitude[magnitude > 0]
    if nonzero.size == 0:
        return magnitude, np.zeros(layer.shape, dtype=bool)
    high = float(np.quantile(nonzero, params.high_threshold_quantile))
    low = params.low_high_ratio * high

    suppressed = _nonmax_suppress(magnitude, gx, gy)
    weak = (suppressed >= low) & (suppressed > 0)
    strong = suppressed >= high
    if not strong.any():
        return magnitude, np.zeros(layer.shape, dtype=bool)

    # hysteresis: weak pixels survive when their 8-connected component
    # contains a strong pixel
    labels, n = ndimage.label(weak, structure=_EIGHT_CONNECTED)
    strong_labels = np.unique(labels[strong & weak])
    strong_labels = strong_labels[strong_labels > 0]
    mask = np.isin(labels, strong_labels)
    return magnitude, mask


def sharpness(layer: np.ndarray, params: CannyParams = CannyParams()) -> float:
    """Edge strength of one layer: gradient magnitude summed over confirmed
    edge pixels, normalized by layer area so stacks of different sizes
    score on a common scale. 0 when nothing survives hysteresis.
    """
    magnitude, mask = canny_edges(layer, params)
    if not mask.any():
        return 0.0
    return float(magnitude[mask].sum() / layer.size)


def select_focal(stack: ZStack, params: CannyParams = CannyParams()) -> FocusProfile:
    """Score every layer and pick the sharpest as focal (ties -> lowest index)."""
    scores = np.array([sharpness(stack.layers[z], params) for z in range(stack.depth)])
    return FocusProfile(scores=scores, focal_index=int(np.argmax(scores)))


def extract_window(depth: int, focal_index: int, n: int) -> range:
    """Contiguous n-layer window centered on the focal layer.

    The ideal window puts floor((n-1)/2) layers above the focal layer and
    ceil((n-1)/2) below; when it overruns either end of the stack it is
    shifted to fit so every sample keeps exactly n layers. The shift can
    move the focal layer off center near stack boundaries.
    """
    if n < 1:
        raise ValueError("window size must be >= 1")
    if n > depth:
        raise ValueError("window exceeds stack depth")
    if not 0 <= focal_index < depth:
        raise ValueError(f"focal index {focal_index} outside [0, {depth})")
    start = focal_index - (n - 1) // 2
    start = max(0, min(start, depth - n))
    return range(start, start + n)


def profile_stack(stack: ZStack, n: int, params: CannyParams = CannyParams()) -> FocusProfile:
    """select_focal plus the clamped n-layer window in one step."""
    profile = select_focal(stack, params)
    profile.window = extract_window(stack.depth, profile.focal_index, n)
    return profile


def dump_profile(stack_id: str, profile: FocusProfile) -> str:
    """Debug text: id line, one 'layer<TAB>score' line per layer, focal line."""
    lines = [stack_id]
    for z, score in enumerate(profile.scores):
        lines.append(f"{z}\t{score:.6f}")
    lines.append(f"focal\t{profile.focal_index}")
    return "\n".join(lines) + "\n"

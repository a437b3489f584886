"""Edge detectors, mask combination, and RGB overlay.

Three detectors feed the dataset builder: Canny (thin contours), Prewitt
(gradient threshold), and a "thick edge" operator standing in for a neural
outline detector (gradient threshold followed by dilation). Externally
computed edge maps can also be imported from PNG files. All detectors work
on the grayscale version of their input and return boolean masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import (as_mask, convolve, dilate, gaussian_blur_float,
                      read_png, to_grayscale, validate_image)

_EIGHT = np.ones((3, 3), dtype=bool)

# Gradient maxima at or below this count as a flat image. Smoothing scales a
# constant field by the kernel sum, which is one only up to rounding, so the
# gradient of a flat field can come out as ~1e-14 dust instead of exact zero;
# any genuine edge in 8-bit data produces magnitudes of order 1.
FLAT_EPS = 1e-8

PREWITT_GX = np.array([[-1.0, 0.0, 1.0]] * 3)
PREWITT_GY = PREWITT_GX.T.copy()
SOBEL_GX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_GY = SOBEL_GX.T.copy()


@dataclass(frozen=True)
class CannyParams:
    sigma: float = 1.4
    low: float = 0.1
    high: float = 0.2

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("canny sigma must be > 0")
        if not 0.0 < self.low < self.high <= 1.0:
            raise ValueError(
                f"canny thresholds need 0 < low < high <= 1, got "
                f"low={self.low}, high={self.high}"
            )


@dataclass(frozen=True)
class PrewittParams:
    threshold: float = 0.15

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("prewitt threshold must be in (0, 1]")


@dataclass(frozen=True)
class ThickParams:
    threshold: float = 0.1
    dilate_radius: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("thick threshold must be in (0, 1]")
        if self.dilate_radius < 1:
            raise ValueError("dilate_radius must be >= 1")


@dataclass(frozen=True)
class EdgeParams:
    canny: CannyParams = field(default_factory=CannyParams)
    prewitt: PrewittParams = field(default_factory=PrewittParams)
    thick: ThickParams = field(default_factory=ThickParams)


def gradient(gray: np.ndarray, kx: np.ndarray, ky: np.ndarray):
    gx = convolve(gray, kx)
    gy = convolve(gray, ky)
    return gx, gy, np.hypot(gx, gy)


def prewitt(img: np.ndarray, p: PrewittParams = PrewittParams()) -> np.ndarray:
    """Threshold the Prewitt gradient magnitude at a fraction of its max."""
    gray = to_grayscale(validate_image(img))
    _, _, mag = gradient(gray, PREWITT_GX, PREWITT_GY)
    top = mag.max()
    if top <= FLAT_EPS:
        return np.zeros(gray.shape, dtype=bool)
    return mag >= p.threshold * top


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that dominate both neighbors along the gradient direction.

    Directions are quantized to 4 bins. Ties are broken asymmetrically
    (strict against the positive-offset neighbor) so a symmetric 2-pixel
    gradient plateau thins to a single line. Neighbors outside the image
    count as zero magnitude, so border pixels can survive.
    """
    h, w = mag.shape
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    padded = np.pad(mag, 1, mode="constant")

    def shifted(dy, dx):
        return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    # x right, y down: 45 degrees points down-right.
    bins = [
        ((ang < 22.5) | (ang >= 157.5), (0, 1), (0, -1)),
        ((ang >= 22.5) & (ang < 67.5), (1, 1), (-1, -1)),
        ((ang >= 67.5) & (ang < 112.5), (1, 0), (-1, 0)),
        ((ang >= 112.5) & (ang < 157.5), (1, -1), (-1, 1)),
    ]
    keep = np.zeros_like(mag, dtype=bool)
    for sel, pos, neg in bins:
        ok = (mag > shifted(*pos)) & (mag >= shifted(*neg))
        keep |= sel & ok
    return keep & (mag > 0.0)


def hysteresis(weak: np.ndarray, strong: np.ndarray) -> np.ndarray:
    """Keep the 8-connected components of `weak` that touch `strong`.

    `strong` must be a subset of `weak` (both thresholds applied to the
    same field guarantee this).
    """
    weak = as_mask(weak)
    strong = as_mask(strong)
    if weak.shape != strong.shape:
        raise ValueError("weak and strong masks must have equal dims")
    if (strong & ~weak).any():
        raise ValueError("strong mask must be a subset of the weak mask")
    if not strong.any():
        return np.zeros_like(weak)
    labels, _ = ndimage.label(weak, structure=_EIGHT)
    keep_labels = np.unique(labels[strong])
    return weak & np.isin(labels, keep_labels)


def canny(img: np.ndarray, p: CannyParams = CannyParams()) -> np.ndarray:
    """Blur, gradient, directional non-max suppression, double threshold,
    and hysteresis keeping weak pixels 8-connected to strong ones.

    Both thresholds are fractions of the pre-suppression maximum gradient.
    """
    gray = to_grayscale(validate_image(img))
    smooth = gaussian_blur_float(gray.astype(np.float64), p.sigma)
    gx, gy, mag = gradient(smooth, SOBEL_GX, SOBEL_GY)
    top = mag.max()
    if top <= FLAT_EPS:
        return np.zeros(gray.shape, dtype=bool)

    thin = _nms(mag, gx, gy)
    strong = thin & (mag >= p.high * top)
    weak = thin & (mag >= p.low * top)
    return hysteresis(weak, strong)


def thick_edge(img: np.ndarray, p: ThickParams = ThickParams()) -> np.ndarray:
    """Gradient-magnitude threshold followed by dilation: thick outlines."""
    gray = to_grayscale(validate_image(img))
    _, _, mag = gradient(gray, SOBEL_GX, SOBEL_GY)
    top = mag.max()
    if top <= FLAT_EPS:
        return np.zeros(gray.shape, dtype=bool)
    seed = mag >= p.threshold * top
    return dilate(seed, p.dilate_radius)


def import_edges(path: str | Path, expected_dims: tuple[int, int]) -> np.ndarray:
    """Load a precomputed edge map PNG, binarized at 128.

    `expected_dims` is (w, h); a mismatch is an error so stale maps cannot
    silently enter a dataset.
    """
    arr = read_png(path)
    if arr.ndim == 3:
        arr = to_grayscale(arr)
    w, h = expected_dims
    if arr.shape != (h, w):
        raise ValueError(
            f"edge map {path} is {arr.shape[1]}x{arr.shape[0]}, expected {w}x{h}"
        )
    return arr >= 128


def combine(masks: list[np.ndarray]) -> np.ndarray:
    """Pixelwise union of two or more equal-sized masks."""
    if len(masks) < 2:
        raise ValueError("combine needs at least two masks")
    out = as_mask(masks[0]).copy()
    for m in masks[1:]:
        m = as_mask(m)
        if m.shape != out.shape:
            raise ValueError(f"mask dims differ: {m.shape} vs {out.shape}")
        out |= m
    return out


def overlay(rgb: np.ndarray, mask: np.ndarray,
            color: tuple[int, int, int] = (0, 0, 0)) -> np.ndarray:
    """Paint `color` wherever the mask is set; all other pixels unchanged."""
    rgb = validate_image(rgb)
    if rgb.ndim != 3:
        raise ValueError("overlay needs an RGB image")
    m = as_mask(mask)
    if m.shape != rgb.shape[:2]:
        raise ValueError(f"mask {m.shape} does not match image {rgb.shape[:2]}")
    if not all(0 <= c <= 255 for c in color):
        raise ValueError(f"color components must be in [0, 255], got {color}")
    out = rgb.copy()
    out[m] = np.asarray(color, dtype=np.uint8)
    return out

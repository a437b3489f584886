"""Deterministic low-level image primitives shared by the whole pipeline.

Images are numpy uint8 arrays: grayscale is (H, W), RGB is (H, W, 3).
Binary masks are bool arrays of shape (H, W). All convolution-style
operations pad the border by edge replication so white-background crops
do not grow spurious frame edges.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

# ITU-R BT.601 luma weights
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check that `img` is a uint8 grayscale or RGB image and return it."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got dtype {arr.dtype}")
    if arr.ndim == 2:
        pass
    elif arr.ndim == 3 and arr.shape[2] == 3:
        pass
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image dimensions must be positive")
    return arr


def is_gray(img: np.ndarray) -> bool:
    return img.ndim == 2


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma conversion; grayscale input comes back as a copy."""
    img = validate_image(img)
    if is_gray(img):
        return img.copy()
    r, g, b = GRAY_WEIGHTS
    gray = r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    return np.rint(gray).astype(np.uint8)


def resize(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize to exactly (h, w); channel count is preserved."""
    img = validate_image(img)
    if w <= 0 or h <= 0:
        raise ValueError(f"target dimensions must be positive, got {w}x{h}")
    src_h, src_w = img.shape[:2]

    # Pixel-center mapping: dst center x maps to (x + 0.5) * scale - 0.5.
    xs = (np.arange(w, dtype=np.float64) + 0.5) * (src_w / w) - 0.5
    ys = (np.arange(h, dtype=np.float64) + 0.5) * (src_h / h) - 0.5
    xs = np.clip(xs, 0.0, src_w - 1.0)
    ys = np.clip(ys, 0.0, src_h - 1.0)

    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = xs - x0
    fy = ys - y0

    data = img.astype(np.float64)
    if is_gray(img):
        fx_row = fx[np.newaxis, :]
        top = data[y0][:, x0] * (1.0 - fx_row) + data[y0][:, x1] * fx_row
        bot = data[y1][:, x0] * (1.0 - fx_row) + data[y1][:, x1] * fx_row
        out = top * (1.0 - fy)[:, np.newaxis] + bot * fy[:, np.newaxis]
    else:
        fx_row = fx[np.newaxis, :, np.newaxis]
        fy_col = fy[:, np.newaxis, np.newaxis]
        top = data[y0][:, x0] * (1.0 - fx_row) + data[y0][:, x1] * fx_row
        bot = data[y1][:, x0] * (1.0 - fx_row) + data[y1][:, x1] * fx_row
        out = top * (1.0 - fy_col) + bot * fy_col
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate a single-channel image with a square odd-sized kernel.

    The anchor is the kernel center, borders are edge-replicated, and the
    result is returned as an unclamped signed float64 grid so gradient
    magnitudes can be computed losslessly downstream.
    """
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"convolve expects a single-channel image, got shape {arr.shape}")
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0 or k.shape[0] < 3:
        raise ValueError(f"kernel must be square with odd size >= 3, got shape {k.shape}")
    h, w = arr.shape
    r = k.shape[0] // 2
    padded = np.pad(arr.astype(np.float64), r, mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            if k[i, j] != 0.0:
                out += k[i, j] * padded[i : i + h, j : j + w]
    return out


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _gaussian_1d_pass(data: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    r = (len(weights) - 1) // 2
    pad = [(0, 0)] * data.ndim
    pad[axis] = (r, r)
    padded = np.pad(data, pad, mode="edge")
    out = np.zeros_like(data)
    n = data.shape[axis]
    index = [slice(None)] * data.ndim
    for i, wgt in enumerate(weights):
        index[axis] = slice(i, i + n)
        out += wgt * padded[tuple(index)]
    return out


def gaussian_blur_float(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing on a float image; no clamping."""
    weights = gaussian_kernel_1d(sigma)
    data = np.asarray(img, dtype=np.float64)
    data = _gaussian_1d_pass(data, weights, axis=0)
    data = _gaussian_1d_pass(data, weights, axis=1)
    return data


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with radius ceil(3*sigma); output clamped to uint8."""
    img = validate_image(img)
    out = gaussian_blur_float(img, sigma)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def as_mask(mask: np.ndarray) -> np.ndarray:
    """Coerce a strictly binary array to a bool (H, W) mask."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be strictly binary")
    return arr.astype(bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a (2r+1) x (2r+1) square structuring element."""
    m = as_mask(mask)
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    h, w = m.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    padded[radius : radius + h, radius : radius + w] = m
    out = np.zeros((h, w), dtype=bool)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def read_png(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG as a grayscale or RGB uint8 array."""
    with PILImage.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.uint8)
        else:
            converted = im.convert("L") if im.mode in ("1", "I;16", "I") else im.convert("RGB")
            arr = np.asarray(converted, dtype=np.uint8)
    return arr


def write_png(path: str | Path, img: np.ndarray) -> None:
    """Write a uint8 image to PNG, creating parent directories as needed."""
    img = validate_image(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "L" if is_gray(img) else "RGB"
    PILImage.fromarray(img, mode=mode).save(path, format="PNG")


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    """Render a bool mask as an 8-bit grayscale image (0/255)."""
    return np.where(as_mask(mask), 255, 0).astype(np.uint8)


def image_to_mask(img: np.ndarray) -> np.ndarray:
    """Binarize an 8-bit grayscale image at 128."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError("mask images must be single-channel")
    return arr >= 128

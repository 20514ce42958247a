"""PNG encoding for [0,1] images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to uint8 with round-half-up of ``255 * v``."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def to_hwc(image: np.ndarray) -> np.ndarray:
    """Accept [3,H,W], [H,W,3] or [H,W] and return [H,W,3]."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    elif img.ndim == 3 and img.shape[0] in (1, 3) and img.shape[-1] not in (1, 3):
        img = img.transpose(1, 2, 0)
    elif img.ndim == 3 and img.shape[0] == 3 and img.shape[-1] == 3:
        # ambiguous 3x3 images: assume channels-first like the rest of the package
        img = img.transpose(1, 2, 0)
    if img.shape[-1] == 1:
        img = np.repeat(img, 3, axis=-1)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"cannot interpret image of shape {np.shape(image)} as RGB")
    return img


def encode_png(image: np.ndarray, path) -> Path:
    """Write an 8-bit RGB PNG. Values are clamped to [0,1] before quantization."""
    path = Path(path)
    pixels = quantize(to_hwc(image))
    try:
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write PNG {path}: {exc}") from exc
    return path


def decode_png(path) -> np.ndarray:
    """Read a PNG into a float32 [3,H,W] array in [0,1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise OSError(f"cannot read PNG {path}: {exc}") from exc
    return (pixels / 255.0).transpose(2, 0, 1)

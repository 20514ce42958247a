"""Synthetic-shapes dataset.

Each class is a simple geometric pattern drawn with a random position, size,
tint and pixel noise. Shapes are only slightly brighter than the background,
which keeps the classifiers trained on them about as easy to fool as
natural-image models. Everything is generated from a seed,
so the acceptance runs never download data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPES = (
    "disk",
    "square",
    "triangle",
    "horizontal_stripes",
    "vertical_stripes",
    "checkerboard",
    "ring",
    "cross",
    "diagonal_stripes",
    "x_mark",
)


@dataclass
class Dataset:
    images: np.ndarray  # [N, 3, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices], self.classes)

    @property
    def class_names(self) -> tuple[str, ...]:
        return SHAPES[: self.classes]


def _mask(shape: str, yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float, period: float, phase: float) -> np.ndarray:
    dy, dx = yy - cy, xx - cx
    inside = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if shape == "disk":
        return dy**2 + dx**2 <= r**2
    if shape == "square":
        return (np.abs(dy) <= 0.8 * r) & (np.abs(dx) <= 0.8 * r)
    if shape == "triangle":
        # apex up, base at cy + r
        t = (dy + r) / (2 * r)
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= t * r)
    if shape == "horizontal_stripes":
        return inside & (np.floor((dy + phase) / period) % 2 == 0)
    if shape == "vertical_stripes":
        return inside & (np.floor((dx + phase) / period) % 2 == 0)
    if shape == "checkerboard":
        return inside & ((np.floor((dy + phase) / period) + np.floor((dx + phase) / period)) % 2 == 0)
    if shape == "ring":
        rr = np.sqrt(dy**2 + dx**2)
        return (rr <= r) & (rr >= 0.55 * r)
    if shape == "cross":
        arm = 0.3 * r
        return inside & ((np.abs(dy) <= arm) | (np.abs(dx) <= arm))
    if shape == "diagonal_stripes":
        return inside & (np.floor((dy + dx + phase) / (1.4 * period)) % 2 == 0)
    if shape == "x_mark":
        arm = 0.3 * r
        return inside & ((np.abs(dy - dx) <= arm * 1.4) | (np.abs(dy + dx) <= arm * 1.4))
    raise ValueError(f"unknown shape {shape!r}")


def render(shape: str, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one sample of ``shape`` as a float32 [3,H,W] image."""
    size = min(height, width)
    r = rng.uniform(0.28, 0.4) * size
    cy = height / 2 + rng.uniform(-0.1, 0.1) * height
    cx = width / 2 + rng.uniform(-0.1, 0.1) * width
    period = rng.uniform(0.09, 0.13) * size
    phase = rng.uniform(0, 2 * period)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    mask = _mask(shape, yy, xx, cy, cx, r, period, phase)

    # Low contrast on a near-grey background with a small per-channel tint.
    base = rng.uniform(0.2, 0.4)
    bg = base + rng.uniform(-0.05, 0.05, size=3)
    fg = bg + rng.uniform(0.12, 0.25) + rng.uniform(-0.04, 0.04, size=3)
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    img = img + rng.normal(0.0, 0.05, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_dataset(classes: int, n_per_class: int, height: int = 32, width: int = 32, seed: int = 0) -> Dataset:
    """Render ``n_per_class`` samples of each of the first ``classes`` shapes.

    Samples are interleaved by class (label ``i % classes``) so any prefix is
    close to balanced.
    """
    if not 4 <= classes <= len(SHAPES):
        raise ValueError(f"unsupported class count {classes}; expected 4..{len(SHAPES)}")
    if height < 16 or width < 16:
        raise ValueError(f"images must be at least 16x16, got {height}x{width}")
    rng = np.random.default_rng(seed)
    n = classes * n_per_class
    images = np.empty((n, 3, height, width), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % classes
    for i in range(n):
        images[i] = render(SHAPES[labels[i]], height, width, rng)
    return Dataset(images, labels, classes)


def train_test(classes: int = 6, n_train: int = 200, n_test: int = 50, size: int = 32, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Independent train and test draws (test uses ``seed + 1``)."""
    return (
        synth_dataset(classes, n_train, size, size, seed),
        synth_dataset(classes, n_test, size, size, seed + 1),
    )

"""Random jitter / scale / rotation applied differentiably to [C,H,W] images.

The order is fixed: rotate, then scale (both about the image centre, one
bilinear resampling), then an integer shift. Out-of-range sample positions
are reflected back into the image, so every output pixel is a convex
combination of input pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class TransformSpec:
    dx: int = 0
    dy: int = 0
    scale: float = 1.0
    angle: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.dx == 0 and self.dy == 0 and self.scale == 1.0 and self.angle == 0.0


IDENTITY = TransformSpec()


@dataclass
class TransformPolicy:
    jitter_max: int = 4
    scale_min: float = 0.9
    scale_max: float = 1.1
    angle_max: float = math.radians(5.0)
    jitter: bool = True
    scaling: bool = True
    rotation: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.jitter_max < 0 or self.angle_max < 0:
            raise ValueError("jitter_max and angle_max must be non-negative")
        if not 0 < self.scale_min <= self.scale_max < 2:
            raise ValueError("scale range must satisfy 0 < scale_min <= scale_max < 2")

    @classmethod
    def disabled(cls, seed: int = 0) -> "TransformPolicy":
        return cls(jitter=False, scaling=False, rotation=False, seed=seed)

    @property
    def enabled(self) -> bool:
        return self.jitter or self.scaling or self.rotation


def sample(policy: TransformPolicy, step: int) -> TransformSpec:
    """Draw the transform for ``step``; a pure function of (policy.seed, step)."""
    rng = np.random.default_rng([policy.seed, step])
    # Always consume the same draws so enabling one transform never shifts another.
    dx, dy = (int(v) for v in rng.integers(-policy.jitter_max, policy.jitter_max + 1, size=2))
    s = float(rng.uniform(policy.scale_min, policy.scale_max))
    a = float(rng.uniform(-policy.angle_max, policy.angle_max))
    return TransformSpec(
        dx=dx if policy.jitter else 0,
        dy=dy if policy.jitter else 0,
        scale=s if policy.scaling else 1.0,
        angle=a if policy.rotation else 0.0,
    )


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    # Half-sample symmetric reflection: -1 -> 0, n -> n-1.
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def _resample_table(h: int, w: int, scale: float, angle: float) -> tuple[np.ndarray, np.ndarray]:
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # Inverse map from output to input coordinates.
    cos, sin = math.cos(angle), math.sin(angle)
    oy, ox = (yy - cy) / scale, (xx - cx) / scale
    sy = cy + cos * oy - sin * ox
    sx = cx + sin * oy + cos * ox
    y0, x0 = np.floor(sy), np.floor(sx)
    fy, fx = sy - y0, sx - x0
    y0, x0 = y0.astype(np.int64), x0.astype(np.int64)
    ys = [_reflect(y0, h), _reflect(y0 + 1, h)]
    xs = [_reflect(x0, w), _reflect(x0 + 1, w)]
    index = np.stack([ys[0] * w + xs[0], ys[0] * w + xs[1], ys[1] * w + xs[0], ys[1] * w + xs[1]], axis=-1)
    weight = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=-1)
    return index.reshape(h * w, 4), weight.reshape(h * w, 4)


def _shift_table(h: int, w: int, dx: int, dy: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    src = _reflect(yy - dy, h) * w + _reflect(xx - dx, w)
    return src.reshape(h * w, 1)


def apply(image: Tensor, spec: TransformSpec) -> Tensor:
    """Transform a [..., H, W] image; the identity spec returns the input unchanged."""
    if spec.is_identity:
        return image
    h, w = image.shape[-2:]
    out = image
    if spec.scale != 1.0 or spec.angle != 0.0:
        index, weight = _resample_table(h, w, spec.scale, spec.angle)
        out = T.gather_weighted(out, index, weight).reshape(image.shape)
    if spec.dx or spec.dy:
        index = _shift_table(h, w, spec.dx, spec.dy)
        out = T.gather_weighted(out, index, np.ones_like(index, dtype=np.float64)).reshape(image.shape)
    return out

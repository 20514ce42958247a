"""Scalar objectives over model units: logits, conv channels, ViT hidden dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .models import ModelGraph
from .tensor import Tensor, no_grad

KINDS = ("logit-neuron", "conv-channel", "vit-hidden-dim")
_ALIASES = {
    "logit": "logit-neuron",
    "logit-neuron": "logit-neuron",
    "neuron": "logit-neuron",
    "channel": "conv-channel",
    "conv-channel": "conv-channel",
    "hidden": "vit-hidden-dim",
    "vit-hidden-dim": "vit-hidden-dim",
}
_RANK = {"logit-neuron": 2, "conv-channel": 4, "vit-hidden-dim": 3}


class UnitError(ValueError):
    """A unit reference is malformed or does not fit the model."""


@dataclass(frozen=True)
class UnitRef:
    tap: str
    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnitError(f"unknown unit kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.index < 0:
            raise UnitError(f"unit index must be non-negative, got {self.index}")

    @classmethod
    def parse(cls, text: str) -> "UnitRef":
        """Parse ``tap:kind:index``, e.g. ``conv_pw_3:channel:17``."""
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise UnitError(f"unit reference {text!r} is not of the form tap:kind:index")
        tap, kind, index = parts
        if kind not in _ALIASES:
            raise UnitError(f"unknown unit kind {kind!r} in {text!r}")
        try:
            idx = int(index)
        except ValueError:
            raise UnitError(f"unit index {index!r} in {text!r} is not an integer") from None
        return cls(tap, _ALIASES[kind], idx)

    def __str__(self) -> str:
        return f"{self.tap}:{self.kind}:{self.index}"

    def validate(self, model: ModelGraph) -> None:
        if self.tap not in model.taps:
            raise UnitError(f"unknown tap {self.tap!r}; available: {', '.join(model.taps)}")
        shape = model.tap_shape(self.tap)
        if len(shape) != _RANK[self.kind]:
            raise UnitError(f"{self.kind} needs a rank-{_RANK[self.kind]} tap, {self.tap!r} has shape {shape}")
        axis = 1 if self.kind == "conv-channel" else -1
        if self.index >= shape[axis]:
            raise UnitError(f"index {self.index} out of range for {self.tap!r} (extent {shape[axis]})")


def _per_sample(act: Tensor, unit: UnitRef) -> Tensor:
    if unit.kind == "logit-neuron":
        return act[:, unit.index]
    if unit.kind == "conv-channel":
        return act[:, unit.index].mean(axis=(1, 2))
    return act[:, :, unit.index].mean(axis=1)


def objective(model: ModelGraph, x, unit: UnitRef) -> Tensor:
    """The scalar to maximise: raw logit, channel mean, or hidden-dim mean over tokens.

    Means run over the batch as well, so a batch of images still yields one scalar.
    """
    unit.validate(model)
    act = model.activations_at(x, unit.tap)
    return _per_sample(act, unit).mean()


def per_sample_objective(model: ModelGraph, x, unit: UnitRef) -> np.ndarray:
    unit.validate(model)
    with no_grad():
        return _per_sample(model.activations_at(x, unit.tap), unit).data


class TopK(NamedTuple):
    indices: list[int]
    values: list[float]
    truncated: bool  # k exceeded the dataset size


def top_activating_inputs(model: ModelGraph, images: np.ndarray, unit: UnitRef, k: int, batch_size: int = 256) -> TopK:
    """Dataset indices ordered by descending objective; ties resolve to the lower index."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    values = np.concatenate(
        [per_sample_objective(model, images[i : i + batch_size], unit) for i in range(0, len(images), batch_size)]
    )
    order = np.lexsort((np.arange(len(values)), -values.astype(np.float64)))
    truncated = k > len(values)
    chosen = order[: min(k, len(values))]
    return TopK([int(i) for i in chosen], [float(values[i]) for i in chosen], truncated)

"""Activation maximization and targeted adversarial examples on desk-scale models.

A numpy reverse-mode autodiff core drives a small CNN and a tiny ViT, a
Fourier-domain image parameterization for Feature-Vis, and a TV-regularized
projected attack.
"""

from .adversarial import AdvConfig, attack, tv
from .engine import AmConfig, feature_vis, pixel_am
from .fourier import SpectralScale, decode, forward_fft, high_freq_energy_ratio
from .models import ModelGraph, build_small_cnn, build_tiny_vit, load_model, save_weights, train
from .objectives import UnitRef, objective
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "AdvConfig",
    "AmConfig",
    "ModelGraph",
    "SpectralScale",
    "Tensor",
    "UnitRef",
    "attack",
    "build_small_cnn",
    "build_tiny_vit",
    "decode",
    "feature_vis",
    "forward_fft",
    "high_freq_energy_ratio",
    "load_model",
    "no_grad",
    "objective",
    "pixel_am",
    "save_weights",
    "train",
    "tv",
]

"""Report figures. Uses the Agg backend and strips PNG metadata so reruns are byte-identical."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imageio import to_hwc  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_trace(trace, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(trace.steps, trace.values, marker="o", ms=3, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    if title:
        ax.set_title(title, fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_domains(rows, path, cutoff: float = 0.25) -> Path:
    """Grouped bars of high-frequency ratio per unit, pixel vs fourier.

    ``rows`` holds ``(unit, pixel_ratio, fourier_ratio)`` triples.
    """
    labels = [str(r[0]) for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows) + 2), 3.2))
    ax.bar(x - 0.2, [r[1] for r in rows], 0.4, label="pixel")
    ax.bar(x + 0.2, [r[2] for r in rows], 0.4, label="fourier")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=7)
    ax.set_ylabel(f"energy above f={cutoff:g}")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_attack(x_orig, x_adv, path, title: str = "", gain: float = 10.0) -> Path:
    """Original, amplified perturbation (centred on grey) and adversarial image side by side."""
    delta = np.asarray(x_adv, dtype=np.float64) - np.asarray(x_orig, dtype=np.float64)
    panels = [
        ("original", np.clip(x_orig, 0, 1)),
        (f"perturbation x{gain:g}", np.clip(0.5 + gain * delta, 0, 1)),
        ("adversarial", np.clip(x_adv, 0, 1)),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(6.0, 2.3))
    for ax, (name, img) in zip(axes, panels):
        ax.imshow(to_hwc(img), interpolation="nearest")
        ax.set_title(name, fontsize=8)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_gallery(images, labels, path, cols: int = 5) -> Path:
    n = len(images)
    rows = max(1, -(-n // cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.4 * cols, 1.5 * rows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < n:
            ax.imshow(to_hwc(np.clip(images[i], 0, 1)), interpolation="nearest")
            ax.set_title(str(labels[i]), fontsize=6)
    fig.tight_layout()
    return _save(fig, path)

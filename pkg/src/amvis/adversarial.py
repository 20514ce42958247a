"""Targeted adversarial examples by TV-regularized logit ascent.

Each iteration moves ``x`` along the gradient of
``logit_t(x) - lam * TV(x - x_orig)`` and projects back onto
``{x in [0,1] : |x - x_orig|_inf <= eps}``. The projection first clips the
perturbation to the eps-ball, then clamps to the valid range.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .models import ModelGraph
from .tensor import Tensor, no_grad

PRESETS = {
    # eps, alpha, lambda, steps
    "resnet-preset": dict(epsilon=0.01, alpha=0.01, lam=1e-4, steps=30),
    "vit-preset": dict(epsilon=0.05, alpha=0.01, lam=1e-4, steps=30),
}


class DivergedAttackError(RuntimeError):
    pass


@dataclass
class AdvConfig:
    epsilon: float = 0.05
    alpha: float = 0.01
    lam: float = 1e-4
    steps: int = 30
    target_class: int = 0
    isotropic: bool = False
    normalize: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "AdvConfig":
        try:
            values = dict(PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
        values.update(overrides)
        return cls(**values)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    predicted: int
    target: int
    target_logits: list[float] = field(default_factory=list)
    linf: float = 0.0
    tv: float = 0.0
    success: bool = False


def tv(delta: Tensor, isotropic: bool = False) -> Tensor:
    """Total variation of a [..., H, W] tensor, summed over all leading axes.

    Anisotropic by default: the sum of absolute forward differences along H and W.
    The isotropic variant sums ``sqrt(dy^2 + dx^2)`` over the (H-1)x(W-1) grid.
    """
    if not isinstance(delta, Tensor):
        delta = Tensor(delta)
    dy = delta[..., 1:, :] - delta[..., :-1, :]
    dx = delta[..., :, 1:] - delta[..., :, :-1]
    if not isotropic:
        return T.absolute(dy).sum() + T.absolute(dx).sum()
    dy, dx = dy[..., :, :-1], dx[..., :-1, :]
    return T.sqrt(dy * dy + dx * dx).sum()


def project(x, x_orig, epsilon: float) -> np.ndarray:
    """Clip ``x - x_orig`` to [-eps, eps], add back to ``x_orig``, then clamp to [0, 1]."""
    x = np.asarray(x)
    x_orig = np.asarray(x_orig)
    if x.shape != x_orig.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_orig.shape}")
    eps = x.dtype.type(epsilon) if np.isfinite(epsilon) else np.inf
    out = x_orig + np.clip(x - x_orig, -eps, eps)
    return np.clip(out, 0.0, 1.0).astype(x.dtype, copy=False)


def _logits(model: ModelGraph, x) -> np.ndarray:
    with no_grad():
        return model.forward(x).data[0]


def attack(model: ModelGraph, x_orig: np.ndarray, cfg: AdvConfig) -> AttackResult:
    """Run ``cfg.steps`` projected ascent iterations from ``x_orig`` towards ``cfg.target_class``."""
    x_orig = np.asarray(x_orig, dtype=np.float32)
    if x_orig.shape != model.input_shape:
        raise T.ShapeError(f"image shape {x_orig.shape} does not match model input {model.input_shape}")
    if not 0 <= cfg.target_class < model.classes:
        raise ValueError(f"target class {cfg.target_class} out of range [0, {model.classes})")
    t = cfg.target_class
    x = x_orig.copy()
    trace = []
    with model.frozen():
        for step in range(cfg.steps):
            xt = Tensor(x, requires_grad=True)
            logit = model.forward(xt)[0, t]
            trace.append(logit.item())
            obj = logit - T.scale(tv(xt - x_orig, cfg.isotropic), cfg.lam) if cfg.lam else logit
            obj.backward()
            g = xt.grad
            if not np.all(np.isfinite(g)):
                raise DivergedAttackError(f"non-finite gradient at step {step}")
            if cfg.normalize:
                peak = np.abs(g).max()
                g = g / peak if peak > 0 else g
            x = project(x + np.float32(cfg.alpha) * g, x_orig, cfg.epsilon)
        logits = _logits(model, x)
    trace.append(float(logits[t]))
    delta = x - x_orig
    with no_grad():
        tv_val = float(tv(Tensor(delta.astype(np.float64)), cfg.isotropic).data)
    pred = int(np.argmax(logits))
    return AttackResult(
        x_adv=x,
        predicted=pred,
        target=t,
        target_logits=trace,
        linf=float(np.abs(delta).max()),
        tv=tv_val,
        success=pred == t,
    )


@dataclass
class AblationReport:
    tv: np.ndarray  # per image, regularized config
    tv_zero: np.ndarray  # per image, lam = 0
    success: np.ndarray
    success_zero: np.ndarray
    linf: np.ndarray
    linf_zero: np.ndarray

    @property
    def success_rate(self) -> float:
        return float(self.success.mean())

    @property
    def success_rate_zero(self) -> float:
        return float(self.success_zero.mean())


def smoothness_ablation(model: ModelGraph, images: np.ndarray, targets, cfg: AdvConfig, cfg_zero_lambda: AdvConfig | None = None) -> AblationReport:
    """Attack every image twice, with ``cfg`` and with ``lam = 0``, and pair the results."""
    if cfg_zero_lambda is None:
        cfg_zero_lambda = replace(cfg, lam=0.0)
    if cfg_zero_lambda.lam != 0:
        raise ValueError("cfg_zero_lambda must have lam == 0")
    rows = []
    for img, target in zip(images, targets):
        a = attack(model, img, replace(cfg, target_class=int(target)))
        b = attack(model, img, replace(cfg_zero_lambda, target_class=int(target)))
        rows.append((a.tv, b.tv, a.success, b.success, a.linf, b.linf))
    cols = list(zip(*rows)) if rows else [()] * 6
    return AblationReport(*(np.array(c) for c in cols))


def report_csv(rows) -> str:
    """CSV with header ``image_id,original_class,target,success,linf,tv,steps``."""
    lines = ["image_id,original_class,target,success,linf,tv,steps"]
    for r in rows:
        lines.append(
            f"{r['image_id']},{r['original_class']},{r['target']},{int(bool(r['success']))},{r['linf']:.9g},{r['tv']:.9g},{r['steps']}"
        )
    return "\n".join(lines) + "\n"

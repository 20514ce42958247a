"""Activation maximization loops: pixel-space ascent and Fourier-space Feature-Vis.

Both loops do plain gradient ascent on a frozen model. Each step draws a
transform, evaluates the unit objective on the transformed image,
backpropagates to the optimized variable and moves it along the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fourier, transforms
from .models import ModelGraph
from .objectives import UnitRef, objective
from .tensor import Tensor, no_grad

DEFAULT_ETA = {"fourier": 0.05, "pixel": 0.5}


class DivergedRunError(RuntimeError):
    def __init__(self, message: str, last_finite_step: int | None):
        super().__init__(message)
        self.last_finite_step = last_finite_step


@dataclass
class AmConfig:
    steps: int = 1000
    eta: float | None = None  # None picks DEFAULT_ETA for the parameterization
    parameterization: str = "fourier"
    policy: transforms.TransformPolicy = field(default_factory=transforms.TransformPolicy)
    decay: float = 1.0
    amplitude: float = 0.01
    seed: int = 0
    trace_every: int = 50
    adaptive: bool = False

    def __post_init__(self):
        if self.parameterization not in DEFAULT_ETA:
            raise ValueError(f"parameterization must be 'pixel' or 'fourier', got {self.parameterization!r}")
        if self.eta is None:
            self.eta = DEFAULT_ETA[self.parameterization]
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


@dataclass
class AmTrace:
    steps: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)

    def record(self, step: int, value: float, snapshot: np.ndarray) -> None:
        self.steps.append(step)
        self.values.append(value)
        self.snapshots.append(snapshot.copy())

    @property
    def initial(self) -> float:
        return self.values[0]

    @property
    def final(self) -> float:
        return self.values[-1]

    def to_csv(self) -> str:
        rows = ["step,objective"] + [f"{s},{v:.9g}" for s, v in zip(self.steps, self.values)]
        return "\n".join(rows) + "\n"


def ascend_step(variable: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """``variable + eta * grad`` (pure)."""
    if np.shape(variable) != np.shape(grad):
        raise ValueError(f"gradient shape {np.shape(grad)} does not match variable shape {np.shape(variable)}")
    return variable + np.asarray(eta, dtype=np.asarray(variable).dtype) * grad


class _Adam:
    # Ablation only: normalized steps instead of the raw gradient.
    def __init__(self, shapes, b1=0.9, b2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def direction(self, grads):
        self.t += 1
        out = []
        for m, v, g in zip(self.m, self.v, grads):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            out.append((mh / (np.sqrt(vh) + self.eps)).astype(g.dtype))
        return out


def _check_finite(value: float, step: int, last_ok: int | None) -> None:
    if not np.isfinite(value):
        raise DivergedRunError(f"objective became {value} at step {step}", last_ok)


def _run(model: ModelGraph, unit: UnitRef, cfg: AmConfig, variables: list[Tensor], render, clamp: bool):
    """Shared ascent loop. ``render()`` maps the variables to a [C,H,W] image tensor."""
    unit.validate(model)
    policy = cfg.policy if cfg.policy.enabled else None
    adam = _Adam([v.shape for v in variables]) if cfg.adaptive else None
    trace = AmTrace()
    last_ok = None
    with model.frozen():
        for i in range(cfg.steps):
            image = render()
            spec = transforms.sample(policy, i) if policy is not None else transforms.IDENTITY
            value = objective(model, transforms.apply(image, spec), unit)
            v = value.item()
            _check_finite(v, i, last_ok)
            last_ok = i
            if i % cfg.trace_every == 0:
                trace.record(i, v, image.data)
            for var in variables:
                var.grad = None
            value.backward()
            grads = [var.grad if var.grad is not None else np.zeros_like(var.data) for var in variables]
            if adam is not None:
                grads = adam.direction(grads)
            for var, g in zip(variables, grads):
                var.data = ascend_step(var.data, g, cfg.eta)
                if clamp:
                    np.clip(var.data, 0.0, 1.0, out=var.data)
                var.grad = None
        with no_grad():
            final = render()
            v = objective(model, final, unit).item()
        _check_finite(v, cfg.steps, last_ok)
        trace.record(cfg.steps, v, final.data)
    return final.data, trace


def feature_vis(model: ModelGraph, unit: UnitRef, cfg: AmConfig) -> tuple[np.ndarray, AmTrace]:
    """Optimize a half spectrum z; each step ascends along grad_z f(tau(decode(z)))."""
    z = init_spectrum_for(model, cfg)
    scale = fourier.SpectralScale(cfg.decay)
    return _run(model, unit, cfg, z.parameters(), lambda: fourier.decode(z, scale), clamp=False)


def init_spectrum_for(model: ModelGraph, cfg: AmConfig) -> fourier.ComplexSpectrum:
    return fourier.init_spectrum(model.input_shape, seed=cfg.seed, amplitude=cfg.amplitude)


def pixel_init(model: ModelGraph, seed: int) -> np.ndarray:
    """Uniform noise in [0.4, 0.6]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.4, 0.6, size=model.input_shape).astype(np.float32)


def pixel_am(model: ModelGraph, unit: UnitRef, cfg: AmConfig, init: np.ndarray | None = None) -> tuple[np.ndarray, AmTrace]:
    """Ascend directly on pixels, clamping to [0, 1] after every step."""
    start = pixel_init(model, cfg.seed) if init is None else np.array(init, dtype=np.float32)
    x = Tensor(start, requires_grad=True)
    return _run(model, unit, cfg, [x], lambda: x, clamp=True)

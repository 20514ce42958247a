"""Run configuration files.

A config is a UTF-8 ``key = value`` file with section headers::

    [run]
    model = out/cnn.lmtw
    out = out/vis
    seed = 0

    [am]
    steps = 500
    units = conv_pw_3:channel:5, logits:logit:2

Every field has a default, and the defaults reproduce the acceptance-suite runs.
Unknown sections or keys are rejected so that typos do not pass silently.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .adversarial import AdvConfig
from .engine import AmConfig
from .transforms import TransformPolicy

# Training schedules that pass the accuracy gates.
TRAIN_DEFAULTS = {"cnn": dict(epochs=20, lr=0.02), "vit": dict(epochs=40, lr=0.01)}


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    model: str = "out/cnn.lmtw"
    out: str = "out"
    seed: int = 0


@dataclass
class DataSection:
    classes: int = 6
    n_train: int = 200  # per class
    n_test: int = 50  # per class
    size: int = 32
    seed: int = 0


@dataclass
class TrainSection:
    arch: str = "cnn"
    epochs: int = 0  # 0 means the per-arch default
    lr: float = 0.0
    batch_size: int = 32
    momentum: float = 0.9

    def schedule(self) -> tuple[int, float]:
        d = TRAIN_DEFAULTS[self.arch]
        return (self.epochs or d["epochs"], self.lr or d["lr"])


@dataclass
class AmSection:
    units: str = "logits:logit-neuron:0"
    steps: int = 500
    eta: float = 0.0  # 0 means the parameterization default
    parameterization: str = "fourier"
    decay: float = 1.0
    amplitude: float = 0.01
    trace_every: int = 50
    jitter: bool = True
    scaling: bool = True
    rotation: bool = True
    jitter_max: int = 4
    scale_min: float = 0.9
    scale_max: float = 1.1
    angle_max_deg: float = 5.0


@dataclass
class AttackSection:
    preset: str = ""
    epsilon: float = 0.05
    alpha: float = 0.01
    lam: float = 1e-4
    steps: int = 30
    images: int = 50
    target_offset: int = 1  # target = (true label + offset) mod classes
    isotropic: bool = False


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    am: AmSection = field(default_factory=AmSection)
    attack: AttackSection = field(default_factory=AttackSection)

    def unit_list(self) -> list[str]:
        return [u.strip() for u in self.am.units.split(",") if u.strip()]

    def am_config(self, seed: int | None = None, parameterization: str | None = None) -> AmConfig:
        a = self.am
        policy = TransformPolicy(
            jitter_max=a.jitter_max,
            scale_min=a.scale_min,
            scale_max=a.scale_max,
            angle_max=math.radians(a.angle_max_deg),
            jitter=a.jitter,
            scaling=a.scaling,
            rotation=a.rotation,
            seed=self.run.seed if seed is None else seed,
        )
        return AmConfig(
            steps=a.steps,
            eta=a.eta or None,
            parameterization=parameterization or a.parameterization,
            policy=policy,
            decay=a.decay,
            amplitude=a.amplitude,
            seed=self.run.seed if seed is None else seed,
            trace_every=a.trace_every,
        )

    def adv_config(self) -> AdvConfig:
        a = self.attack
        if a.preset:
            return AdvConfig.preset(a.preset, isotropic=a.isotropic)
        return AdvConfig(epsilon=a.epsilon, alpha=a.alpha, lam=a.lam, steps=a.steps, isotropic=a.isotropic)


def _coerce(raw: str, typ, where: str):
    if typ is bool or typ == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    conv = {"int": int, "float": float, "str": str}.get(typ, typ)
    try:
        return conv(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(conv, '__name__', conv)}") from None


def loads(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {str(exc).splitlines()[0]}") from None
    cfg = RunConfig()
    sections = {f.name: f for f in fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"{source}: unknown section [{name}]")
        section = getattr(cfg, name)
        known = {f.name: f.type for f in fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            setattr(section, key, _coerce(raw, known[key], f"{source} [{name}] {key}"))
    if cfg.train.arch not in TRAIN_DEFAULTS:
        raise ConfigError(f"{source}: train.arch must be one of {', '.join(TRAIN_DEFAULTS)}")
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, str(path))


def dumps(cfg: RunConfig) -> str:
    out = []
    for f in fields(cfg):
        out.append(f"[{f.name}]")
        section = getattr(cfg, f.name)
        for g in fields(section):
            v = getattr(section, g.name)
            out.append(f"{g.name} = {str(v).lower() if isinstance(v, bool) else v}")
        out.append("")
    return "\n".join(out)

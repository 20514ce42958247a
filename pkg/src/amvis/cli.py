"""Command-line entry point: ``amvis {train,visualize,attack,inspect,compare-domains}``.

Exit codes: 0 success, 1 runtime failure, 2 bad command line, 3 unreadable or
invalid config, 4 invalid unit reference. Failures print one line to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import engine, fourier, lmt, models, plotting
from .adversarial import attack, report_csv
from .config import ConfigError, RunConfig
from .data import train_test
from .imageio import encode_png
from .objectives import UnitError, UnitRef

EXIT_FAILURE, EXIT_USAGE, EXIT_CONFIG, EXIT_UNIT = 1, 2, 3, 4

logger = logging.getLogger("amvis")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _slug(unit: UnitRef) -> str:
    return f"{unit.tap}_{unit.kind}_{unit.index}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_model(path) -> models.ModelGraph:
    return models.load_model(path)


def _units(args, cfg: RunConfig, model) -> list[UnitRef]:
    texts = args.unit or cfg.unit_list()
    units = [UnitRef.parse(t) for t in texts]
    for u in units:
        u.validate(model)
    return units


def _checked(model, fn):
    # The model must come out of every AM / attack run bit-identical.
    before = model.checksum()
    out = fn()
    if model.checksum() != before:
        raise RuntimeError("model parameters changed during a frozen run")
    return out


# -- subcommands ---------------------------------------------------------------------


def cmd_train(args, cfg: RunConfig) -> int:
    if args.arch:
        cfg.train.arch = args.arch
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.lr is not None:
        cfg.train.lr = args.lr
    epochs, lr = cfg.train.schedule()
    d = cfg.data
    train_set, test_set = train_test(d.classes, d.n_train, d.n_test, d.size, d.seed)
    shape = (3, d.size, d.size)
    if cfg.train.arch == "cnn":
        model = models.build_small_cnn(shape, d.classes, cfg.run.seed)
    else:
        model = models.build_tiny_vit(shape, classes=d.classes, seed=cfg.run.seed)
    report = models.train(model, train_set, epochs, lr, cfg.run.seed, test=test_set, batch_size=cfg.train.batch_size, momentum=cfg.train.momentum)
    out = Path(args.output or cfg.run.model)
    out.parent.mkdir(parents=True, exist_ok=True)
    models.save_weights(model, out)
    stem = out.with_suffix("")
    rows = ["epoch,loss"] + [f"{i + 1},{v:.9g}" for i, v in enumerate(report.loss_curve)]
    _write(Path(f"{stem}_train.csv"), "\n".join(rows) + "\n")
    trace = engine.AmTrace(list(range(1, epochs + 1)), report.loss_curve)
    plotting.plot_trace(trace, Path(f"{stem}_loss.png"), title=f"{cfg.train.arch} training loss")
    print(f"arch={cfg.train.arch} epochs={epochs} lr={lr:g} params={model.num_parameters()}")
    print(f"train_accuracy={report.train_accuracy:.4f} test_accuracy={report.test_accuracy:.4f}")
    print(f"weights -> {out}")
    return 0


def cmd_inspect(args, cfg: RunConfig) -> int:
    model = _load_model(args.model or cfg.run.model)
    print(f"arch {model.arch['kind']} params {model.num_parameters()} checksum {model.checksum()[:16]}")
    for name, (_, shape) in model.taps.items():
        print(f"{name}\t{'x'.join(str(s) for s in ('N',) + tuple(shape))}")
    return 0


def _am_overrides(args, cfg: RunConfig) -> None:
    if args.steps is not None:
        cfg.am.steps = args.steps
    if args.eta is not None:
        cfg.am.eta = args.eta
    if getattr(args, "parameterization", None):
        cfg.am.parameterization = args.parameterization


def _run_am(model, unit, am_cfg):
    if am_cfg.parameterization == "fourier":
        return engine.feature_vis(model, unit, am_cfg)
    return engine.pixel_am(model, unit, am_cfg)


def cmd_visualize(args, cfg: RunConfig) -> int:
    model = _load_model(args.model or cfg.run.model)
    units = _units(args, cfg, model)
    _am_overrides(args, cfg)
    am_cfg = cfg.am_config()
    # An explicit --eta 0 must mean zero, not "use the default".
    if args.eta is not None:
        am_cfg.eta = args.eta
    out = Path(args.output or cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = ["unit,parameterization,seed,initial,final,hf_ratio"]
    for unit in units:
        image, trace = _checked(model, lambda: _run_am(model, unit, am_cfg))
        slug = _slug(unit)
        encode_png(image, out / f"{slug}.png")
        lmt.save(out / f"{slug}.lmt", image)
        _write(out / f"{slug}_trace.csv", trace.to_csv())
        plotting.plot_trace(trace, out / f"{slug}_trace.png", title=str(unit))
        hf = fourier.high_freq_energy_ratio(image)
        summary.append(f"{unit},{am_cfg.parameterization},{am_cfg.seed},{trace.initial:.9g},{trace.final:.9g},{hf:.9g}")
        print(f"{unit}: objective {trace.initial:.4g} -> {trace.final:.4g}, hf_ratio {hf:.3f}")
    _write(out / "summary.csv", "\n".join(summary) + "\n")
    return 0


def attack_targets(model, images, labels, count: int, offset: int):
    """First ``count`` correctly classified images with target ``(label + offset) % classes``."""
    pred = model.predict(images)
    ids = np.flatnonzero(pred == labels)[:count]
    return ids, (labels[ids] + offset) % model.classes


def cmd_attack(args, cfg: RunConfig) -> int:
    model = _load_model(args.model or cfg.run.model)
    if args.preset:
        cfg.attack.preset = args.preset
    if args.epsilon is not None:
        cfg.attack.epsilon = args.epsilon
        cfg.attack.preset = ""
    if args.images is not None:
        cfg.attack.images = args.images
    adv = cfg.adv_config()
    if args.steps is not None:
        adv = replace(adv, steps=args.steps)
    d = cfg.data
    _, test_set = train_test(d.classes, d.n_train, d.n_test, d.size, d.seed)
    ids, targets = attack_targets(model, test_set.images, test_set.labels, cfg.attack.images, cfg.attack.target_offset)
    out = Path(args.output or cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, t in zip(ids, targets):
        x = test_set.images[i]
        res = _checked(model, lambda: attack(model, x, replace(adv, target_class=int(t))))
        rows.append(dict(image_id=int(i), original_class=int(test_set.labels[i]), target=int(t), success=res.success, linf=res.linf, tv=res.tv, steps=adv.steps))
        delta = res.x_adv.astype(np.float64) - x
        encode_png(np.clip(0.5 + 10.0 * delta, 0.0, 1.0), out / f"img{i:04d}_perturbation_x10.png")
        encode_png(res.x_adv, out / f"img{i:04d}_adversarial.png")
        if len(rows) <= args.figures:
            plotting.plot_attack(x, res.x_adv, out / f"img{i:04d}_grid.png", title=f"class {test_set.labels[i]} -> target {t}")
    _write(out / "attack.csv", report_csv(rows))
    rate = float(np.mean([r["success"] for r in rows])) if rows else 0.0
    print(f"eps={adv.epsilon:g} alpha={adv.alpha:g} lambda={adv.lam:g} steps={adv.steps} images={len(rows)} success_rate={rate:.3f}")
    return 0


def cmd_compare(args, cfg: RunConfig) -> int:
    model = _load_model(args.model or cfg.run.model)
    units = _units(args, cfg, model)
    _am_overrides(args, cfg)
    out = Path(args.output or cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["unit,seed,pixel_hf_ratio,fourier_hf_ratio,pixel_final,fourier_final"]
    bars = []
    for unit in units:
        results = {}
        for mode in ("pixel", "fourier"):
            am_cfg = cfg.am_config(parameterization=mode)
            if args.eta is not None:
                am_cfg.eta = args.eta
            image, trace = _checked(model, lambda: _run_am(model, unit, am_cfg))
            encode_png(image, out / f"{_slug(unit)}_{mode}.png")
            results[mode] = (fourier.high_freq_energy_ratio(image), trace.final)
        (hp, fp), (hf, ff) = results["pixel"], results["fourier"]
        lines.append(f"{unit},{cfg.run.seed},{hp:.9g},{hf:.9g},{fp:.9g},{ff:.9g}")
        bars.append((unit, hp, hf))
        print(f"{unit}: hf_ratio pixel {hp:.4f} fourier {hf:.4f}")
    _write(out / "domains.csv", "\n".join(lines) + "\n")
    plotting.plot_domains(bars, out / "domains.png")
    return 0


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--config", help="RunConfig file (sectioned key=value)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="amvis", description="Activation maximization and adversarial examples on desk-scale models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model on synthetic shapes")
    t.add_argument("--arch", choices=("cnn", "vit"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("-o", "--output", help="weights path")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("inspect", parents=[common], help="list taps and shapes")
    i.add_argument("model", nargs="?")
    i.set_defaults(func=cmd_inspect)

    for name, func, helptext in (
        ("visualize", cmd_visualize, "activation maximization for units"),
        ("compare-domains", cmd_compare, "pixel vs fourier high-frequency ratio"),
    ):
        v = sub.add_parser(name, parents=[common], help=helptext)
        v.add_argument("--model")
        v.add_argument("--unit", action="append", help="tap:kind:index, repeatable")
        v.add_argument("--steps", type=int)
        v.add_argument("--eta", type=float)
        if name == "visualize":
            v.add_argument("--parameterization", choices=("fourier", "pixel"))
        v.add_argument("-o", "--output", help="output directory")
        v.set_defaults(func=func)

    a = sub.add_parser("attack", parents=[common], help="targeted TV-regularized attack")
    a.add_argument("--model")
    a.add_argument("--preset", choices=("resnet-preset", "vit-preset"))
    a.add_argument("--epsilon", type=float)
    a.add_argument("--steps", type=int)
    a.add_argument("--images", type=int)
    a.add_argument("--figures", type=int, default=5, help="number of grid figures to render")
    a.add_argument("-o", "--output", help="output directory")
    a.set_defaults(func=cmd_attack)
    return p


def _fail(code: int, message: str) -> int:
    print(f"amvis: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_mod.load(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if args.seed is not None:
        cfg.run.seed = args.seed
    try:
        return args.func(args, cfg)
    except UnitError as exc:
        return _fail(EXIT_UNIT, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        logger.debug("failure", exc_info=True)
        return _fail(EXIT_FAILURE, f"{type(exc).__name__}: {exc}".replace("\n", " "))


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance gates. Each test is tagged with its criterion number; the terminal
summary prints one PASS/FAIL line per criterion.

Trained models come from the session fixtures in conftest.py, so this file
also exercises the default training schedules.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from amvis import engine, fourier, transforms
from amvis import tensor as T
from amvis.adversarial import AdvConfig, attack, project, smoothness_ablation, tv
from amvis.cli import attack_targets
from amvis.engine import AmConfig
from amvis.fourier import SpectralScale
from amvis.objectives import UnitRef, objective
from amvis.tensor import Tensor

PROBES = 100
OP_TOL = 1e-4
E2E_TOL = 1e-3


def _weights(shape, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def _scalar(out):
    # Random projection so every output coordinate contributes to the gradient.
    return (out * _weights(out.shape, seed=out.size)).sum()


def _op_cases():
    r = np.random.default_rng(0)
    x = r.normal(size=(10, 12))
    pos = r.uniform(0.5, 2.0, size=(10, 12))
    other = Tensor(r.normal(size=(12,)))
    img = r.normal(size=(2, 3, 8, 8))
    kernel = r.normal(size=(4, 3, 3, 3)) * 0.3
    bias = r.normal(size=4)
    mat = Tensor(r.normal(size=(12, 5)))
    gamma, beta = Tensor(r.uniform(0.5, 1.5, 12)), Tensor(r.normal(size=12))
    labels = r.integers(0, 12, size=10)
    idx = r.integers(0, 64, size=(40, 4))
    wts = r.uniform(size=(40, 4))
    spec = transforms.TransformSpec(dx=2, dy=-1, scale=1.07, angle=0.07)
    half = r.normal(size=(2, 8, 5))
    cases = {
        "add": (lambda t: _scalar(t + other), x),
        "sub": (lambda t: _scalar(other - t), x),
        "mul": (lambda t: _scalar(t * t * other), x),
        "div_num": (lambda t: _scalar(T.div(t, Tensor(pos))), x),
        "div_den": (lambda t: _scalar(T.div(other, t)), pos),
        "scale": (lambda t: _scalar(T.scale(t, -2.5)), x),
        "relu": (lambda t: _scalar(T.relu(t)), x),
        "sigmoid": (lambda t: _scalar(T.sigmoid(t)), x),
        "gelu": (lambda t: _scalar(T.gelu(t)), x),
        "tanh": (lambda t: _scalar(T.tanh(t)), x),
        "exp": (lambda t: _scalar(T.exp(T.scale(t, 0.5))), x),
        "log": (lambda t: _scalar(T.log(t)), pos),
        "sqrt": (lambda t: _scalar(T.sqrt(t)), pos),
        "abs": (lambda t: _scalar(T.absolute(t)), x),
        "reshape": (lambda t: _scalar(T.reshape(t, (3, 40))), x),
        "transpose": (lambda t: _scalar(T.transpose(t)), x),
        "getitem_basic": (lambda t: _scalar(t[2:9, ::2]), x),
        "getitem_fancy": (lambda t: _scalar(t[np.array([0, 3, 3, 7])]), x),
        "concat": (lambda t: _scalar(T.concat([t, T.scale(t, 2.0)], axis=1)), x),
        "gather_weighted": (lambda t: _scalar(T.gather_weighted(t, idx, wts)), img),
        "sum": (lambda t: _scalar(t.sum(axis=0)), x),
        "mean": (lambda t: _scalar(t.mean(axis=1)), x),
        "max": (lambda t: _scalar(t.max(axis=1)), x),
        "matmul": (lambda t: _scalar(t @ mat), x),
        "matmul_rhs": (lambda t: _scalar(Tensor(x) @ t), mat.data),
        "linear": (lambda t: _scalar(T.linear(t, Tensor(mat.data.T), Tensor(np.ones(5)))), x),
        "softmax": (lambda t: _scalar(T.softmax(t)), x),
        "log_softmax": (lambda t: _scalar(T.log_softmax(t)), x),
        "cross_entropy": (lambda t: T.cross_entropy(t, labels), x),
        "layer_norm": (lambda t: _scalar(T.layer_norm(t, gamma, beta)), x),
        "conv2d": (lambda t: _scalar(T.conv2d(t, Tensor(kernel), Tensor(bias), padding=1)), img),
        "conv2d_kernel": (lambda t: _scalar(T.conv2d(Tensor(img), t, stride=2, padding=1)), kernel),
        "max_pool2d": (lambda t: _scalar(T.max_pool2d(t)), img),
        "irfft2": (lambda t: _scalar(T.irfft2(t, Tensor(half[::-1].copy()), (8, 8))), half),
        "transform_apply": (lambda t: _scalar(transforms.apply(t, spec)), img[0]),
        "fourier_decode": (
            lambda t: _scalar(fourier.decode(fourier.ComplexSpectrum(t, Tensor(half), (8, 8)), SpectralScale())),
            half,
        ),
        "tv": (lambda t: tv(t), img[0]),
        "tv_isotropic": (lambda t: tv(t, isotropic=True), img[0]),
    }
    return cases


_OPS = _op_cases()


@pytest.mark.criterion(1)
@pytest.mark.parametrize("name", sorted(_OPS))
def test_c1_op_gradients(name, detail):
    f, x = _OPS[name]
    report = T.grad_check_report(f, x, probes=PROBES, seed=1)
    assert len(report.errors) == min(PROBES, np.size(x))
    assert len(report.flagged) < 5, f"too many kinks for {name}: {report.flagged}"
    assert report.max_error < OP_TOL, f"{name}: {report}"
    if name == "conv2d":
        detail(f"ops max err e.g. conv2d {report.max_error:.1e}")


@pytest.mark.criterion(1)
@pytest.mark.parametrize(
    "arch,unit",
    [
        ("cnn", "logits:logit-neuron:2"),
        ("cnn", "conv_pw_3:conv-channel:5"),
        ("vit", "hidden_2:vit-hidden-dim:7"),
        ("vit", "logits:logit-neuron:1"),
    ],
)
def test_c1_end_to_end_gradients(arch, unit, trained_cnn, trained_vit, shapes_data, detail):
    model = (trained_cnn if arch == "cnn" else trained_vit)[0].astype(np.float64)
    ref = UnitRef.parse(unit)
    x = shapes_data[1].images[3].astype(np.float64)
    start = time.process_time()
    report = T.grad_check_report(lambda t: objective(model, t, ref), x, probes=PROBES, seed=2)
    assert report.max_error < E2E_TOL, report
    detail(f"{arch} {ref.kind} err {report.max_error:.1e} ({time.process_time() - start:.1f}s)")


@pytest.mark.criterion(2)
def test_c2_fourier_machinery(detail):
    rng = np.random.default_rng(0)
    scale = SpectralScale()
    img = rng.normal(size=(3, 32, 32))
    z = fourier.forward_fft(img, scale)
    pre = fourier.decode_linear(z, scale).data
    roundtrip = float(np.abs(fourier.forward_fft(pre, scale).numpy() - z.numpy()).max())
    assert roundtrip < 1e-5
    assert np.all(fourier.decode(fourier.init_spectrum((3, 32, 32), amplitude=0.0), scale).data == 0.5)
    spatial = float((pre.astype(np.float64) ** 2).sum())
    rel = abs(spatial - fourier.spectral_energy(z, scale)) / spatial
    assert rel < 1e-4
    detail(f"roundtrip {roundtrip:.1e}, parseval rel {rel:.1e}")


# -- activation maximization grid (criteria 3, 4) -------------------------------------

AM_UNITS = [UnitRef("logits", "logit-neuron", i) for i in range(3)]
AM_SEEDS = range(5)
AM_STEPS = 500


def _checked(model, log, name, fn):
    before = model.checksum()
    out = fn()
    log.append((name, before, model.checksum()))
    return out


@pytest.fixture(scope="module")
def am_grid(trained_cnn, frozen_log):
    model = trained_cnn[0]
    rows = []
    start = time.process_time()
    for unit in AM_UNITS:
        for seed in AM_SEEDS:
            fcfg = AmConfig(steps=AM_STEPS, seed=seed, policy=transforms.TransformPolicy(seed=seed))
            pcfg = replace(fcfg, parameterization="pixel", eta=engine.DEFAULT_ETA["pixel"])
            img, trace = _checked(model, frozen_log, f"feature_vis {unit} s{seed}", lambda: engine.feature_vis(model, unit, fcfg))
            pimg, _ = _checked(model, frozen_log, f"pixel_am {unit} s{seed}", lambda: engine.pixel_am(model, unit, pcfg))
            rows.append(dict(unit=unit, seed=seed, image=img, trace=trace, pixel=pimg))
    return rows, time.process_time() - start


@pytest.mark.criterion(3)
def test_c3_feature_vis_raises_logit(am_grid, detail):
    rows, elapsed = am_grid
    # gain relative to the magnitude of the starting logit, so a negative start cannot flip the sign
    gains = np.array([r["trace"].final / abs(r["trace"].initial) for r in rows])
    assert all(r["trace"].final > 0 for r in rows)
    assert np.median(gains) >= 5.0
    detail(f"median gain {np.median(gains):.1f}x, min {gains.min():.1f}x over {len(rows)} runs, {elapsed:.0f}s with c4")


@pytest.mark.criterion(3)
def test_c3_rerun_is_byte_identical(trained_cnn, am_grid, frozen_log):
    model = trained_cnn[0]
    row = am_grid[0][4]
    cfg = AmConfig(steps=AM_STEPS, seed=row["seed"], policy=transforms.TransformPolicy(seed=row["seed"]))
    img, trace = _checked(model, frozen_log, "feature_vis rerun", lambda: engine.feature_vis(model, row["unit"], cfg))
    assert img.tobytes() == row["image"].tobytes()
    assert trace.to_csv() == row["trace"].to_csv()


@pytest.mark.criterion(4)
def test_c4_pixel_am_is_higher_frequency(am_grid, detail):
    rows, _ = am_grid
    hf_pixel = np.median([fourier.high_freq_energy_ratio(r["pixel"], 0.25) for r in rows])
    hf_fourier = np.median([fourier.high_freq_energy_ratio(r["image"], 0.25) for r in rows])
    assert hf_pixel > hf_fourier
    detail(f"median ratio pixel {hf_pixel:.3f} vs fourier {hf_fourier:.3f}")


@pytest.mark.criterion(5)
def test_c5_softmax_logit_dissociation(detail):
    z = Tensor(np.array([2.0, 1.0, 1.0]))
    z2 = Tensor(np.array([3.0, 2.9, 2.9]))
    p, p2 = T.softmax(z).data[0], T.softmax(z2).data[0]
    # independent closed form
    assert p == pytest.approx(1 / (1 + 2 * np.exp(-1.0)), abs=1e-12)
    assert p2 == pytest.approx(1 / (1 + 2 * np.exp(-0.1)), abs=1e-12)
    assert z.data[0] < z2.data[0] and p > p2
    assert p == pytest.approx(0.5761, abs=1e-3) and p2 == pytest.approx(0.3559, abs=1e-3)
    detail(f"{p:.4f} / {p2:.4f}")


# -- attacks (criteria 6, 7, 8) -------------------------------------------------------


@pytest.fixture(scope="module")
def attack_runs(trained_cnn, shapes_data, frozen_log):
    model = trained_cnn[0]
    test_set = shapes_data[1]
    ids, targets = attack_targets(model, test_set.images, test_set.labels, 50, 1)
    out = {"ids": ids, "targets": targets, "images": test_set.images[ids]}
    start = time.process_time()
    for eps in (0.05, 0.01):
        cfg = AdvConfig(epsilon=eps, alpha=0.01, lam=1e-4, steps=30)
        out[eps] = [
            _checked(model, frozen_log, f"attack eps={eps} img{i}", lambda: attack(model, test_set.images[i], replace(cfg, target_class=int(t))))
            for i, t in zip(ids, targets)
        ]
    out["time"] = time.process_time() - start
    cfg = AdvConfig(epsilon=0.05)
    out["ablation"] = _checked(
        model, frozen_log, "smoothness ablation", lambda: smoothness_ablation(model, test_set.images[ids[:30]], targets[:30], cfg)
    )
    return out


@pytest.mark.criterion(6)
def test_c6_attack_outputs_in_constraint_set(attack_runs, detail):
    worst = 0.0
    for eps in (0.05, 0.01):
        for x, res in zip(attack_runs["images"], attack_runs[eps]):
            assert res.x_adv.min() >= 0.0 and res.x_adv.max() <= 1.0
            linf = float(np.abs(res.x_adv.astype(np.float64) - x).max())
            assert linf <= eps + 1e-6
            worst = max(worst, linf - eps)
    detail(f"max linf excess {worst:.1e}")


@pytest.mark.criterion(6)
def test_c6_project_idempotent():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 6, size=3))
        x0 = rng.uniform(0, 1, shape)
        x = x0 + rng.normal(0, 0.3, shape)
        eps = float(rng.uniform(1e-3, 0.5))
        once = project(x, x0, eps)
        assert np.array_equal(project(once, x0, eps), once)
        assert np.abs(once - x0).max() <= eps + 1e-12


@pytest.mark.criterion(7)
def test_c7_attack_success(attack_runs, detail):
    assert len(attack_runs["ids"]) == 50
    rate = np.mean([r.success for r in attack_runs[0.05]])
    rate_small = np.mean([r.success for r in attack_runs[0.01]])
    detail(f"eps=0.05 success {rate:.2f}; eps=0.01 success {rate_small:.2f} (reported only); {attack_runs['time']:.0f}s")
    assert rate >= 0.80


@pytest.mark.criterion(8)
def test_c8_tv_regularization(attack_runs, detail):
    rep = attack_runs["ablation"]
    assert len(rep.tv) >= 30
    med, med0 = float(np.median(rep.tv)), float(np.median(rep.tv_zero))
    drop = rep.success_rate_zero - rep.success_rate
    detail(f"median tv {med:.3f} vs {med0:.3f} at lambda=0; success {rep.success_rate:.2f} vs {rep.success_rate_zero:.2f}")
    assert med < med0
    assert drop <= 0.10


@pytest.mark.criterion(10)
def test_c10_trainability(trained_cnn, trained_vit, detail):
    _, cnn_report, cnn_time = trained_cnn
    _, vit_report, vit_time = trained_vit
    detail(f"cnn {cnn_report.test_accuracy:.3f}, vit {vit_report.test_accuracy:.3f}, {cnn_time + vit_time:.0f}s")
    assert cnn_report.test_accuracy >= 0.95
    assert vit_report.test_accuracy >= 0.90
    assert cnn_time + vit_time < 15 * 60


@pytest.mark.criterion(9)
def test_c9_frozen_contract(frozen_log, am_grid, attack_runs, detail):
    # depends on the fixtures above so every run has already been logged
    assert len(frozen_log) >= 2 * len(AM_UNITS) * len(AM_SEEDS) + 100
    changed = [name for name, before, after in frozen_log if before != after]
    assert not changed, changed[:5]
    detail(f"{len(frozen_log)} runs checked")

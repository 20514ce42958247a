import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amvis import engine, models
from amvis.adversarial import AdvConfig, attack, project, report_csv, smoothness_ablation, tv
from amvis.objectives import UnitRef
from amvis.tensor import Tensor
from amvis.transforms import TransformPolicy


@pytest.fixture(scope="module")
def cnn():
    return models.build_small_cnn((3, 16, 16), 4, seed=0, widths=(4, 6, 6, 6))


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(0).uniform(0.2, 0.8, size=(4, 3, 16, 16)).astype(np.float32)


def test_tv_small_example():
    assert tv(np.array([[0.0, 1.0], [1.0, 0.0]])).item() == 4.0
    assert tv(np.zeros((3, 5, 5))).item() == 0.0


def test_tv_isotropic_example():
    d = np.array([[0.0, 3.0], [4.0, 0.0]])
    assert tv(d, isotropic=True).item() == pytest.approx(5.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-4, 4))
def test_tv_is_absolutely_homogeneous(seed, c):
    d = np.random.default_rng(seed).normal(size=(2, 6, 7))
    assert tv(c * d).item() == pytest.approx(abs(c) * tv(d).item(), rel=1e-9, abs=1e-9)


def test_project_bounds_and_idempotence():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(size=(3, 8, 8))
    x = x0 + rng.normal(0, 0.2, size=x0.shape)
    p = project(x, x0, 0.05)
    assert np.abs(p - x0).max() <= 0.05 + 1e-12
    assert p.min() >= 0 and p.max() <= 1
    assert np.array_equal(project(p, x0, 0.05), p)
    assert np.array_equal(project(x, x0, math.inf), np.clip(x, 0, 1))


def test_project_clips_then_clamps():
    # clipping first then clamping can leave |delta| < eps at the range boundary
    assert project(np.array([1.3]), np.array([0.98]), 0.1)[0] == 1.0
    assert project(np.array([-0.5]), np.array([0.02]), 0.1)[0] == 0.0


def test_attack_respects_constraints(cnn, images):
    res = attack(cnn, images[0], AdvConfig(epsilon=0.03, steps=5, target_class=2))
    assert res.linf <= 0.03 + 1e-6
    assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1
    assert len(res.target_logits) == 6


def test_attack_preserves_model(cnn, images):
    before = cnn.checksum()
    attack(cnn, images[1], AdvConfig(steps=3, target_class=1))
    assert cnn.checksum() == before


def test_unconstrained_attack_matches_pixel_am(cnn, images):
    """lam=0 and eps=inf reduces the attack to pixel-space ascent on the target logit."""
    steps, alpha = 8, 0.01
    res = attack(cnn, images[2], AdvConfig(epsilon=math.inf, alpha=alpha, lam=0.0, steps=steps, target_class=3))
    cfg = engine.AmConfig(steps=steps, eta=alpha, parameterization="pixel", policy=TransformPolicy.disabled())
    ref, _ = engine.pixel_am(cnn, UnitRef("logits", "logit-neuron", 3), cfg, init=images[2])
    np.testing.assert_allclose(res.x_adv, ref, atol=1e-5)


def test_zero_alpha_leaves_image(cnn, images):
    res = attack(cnn, images[0], AdvConfig(alpha=0.0, steps=2))
    assert res.x_adv.tobytes() == images[0].tobytes()
    assert res.linf == 0 and res.tv == 0


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(alpha=-1.0), dict(lam=-1.0), dict(steps=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AdvConfig(**kw)


def test_presets():
    assert AdvConfig.preset("vit-preset").epsilon == 0.05
    r = AdvConfig.preset("resnet-preset", target_class=2)
    assert (r.epsilon, r.alpha, r.lam, r.steps, r.target_class) == (0.01, 0.01, 1e-4, 30, 2)
    with pytest.raises(ValueError):
        AdvConfig.preset("inception")


def test_attack_rejects_bad_inputs(cnn, images):
    with pytest.raises(ValueError):
        attack(cnn, images[0], AdvConfig(target_class=7))
    with pytest.raises(ValueError):
        attack(cnn, images[0][:, :8], AdvConfig())


def test_tv_gradient_lowers_tv():
    # one step along -grad TV reduces TV for a rough perturbation
    d = Tensor(np.random.default_rng(3).normal(size=(1, 6, 6)), requires_grad=True)
    tv(d).backward()
    stepped = d.data - 0.01 * d.grad
    assert tv(stepped).item() < tv(d.data).item()


def test_ablation_pairs_results(cnn, images):
    rep = smoothness_ablation(cnn, images[:2], [1, 2], AdvConfig(steps=3))
    assert rep.tv.shape == rep.tv_zero.shape == (2,)
    with pytest.raises(ValueError):
        smoothness_ablation(cnn, images[:1], [1], AdvConfig(), AdvConfig(lam=0.1))


def test_report_csv():
    text = report_csv([dict(image_id=3, original_class=1, target=2, success=True, linf=0.05, tv=1.5, steps=30)])
    assert text == "image_id,original_class,target,success,linf,tv,steps\n3,1,2,1,0.05,1.5,30\n"

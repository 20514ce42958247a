import time

import numpy as np
import pytest

from amvis import models
from amvis.config import TRAIN_DEFAULTS, DataSection
from amvis.data import train_test

# criterion number -> (passed, detail); filled by tests marked ``criterion``
_CRITERIA: dict[int, list] = {}
_CRITERION_NAMES = {
    1: "gradient fidelity",
    2: "fourier machinery",
    3: "feature-vis raises logit >= 5x",
    4: "pixel AM has more high-frequency energy",
    5: "softmax/logit dissociation witness",
    6: "attack constraint exactness",
    7: "attack efficacy at eps=0.05",
    8: "TV regularization lowers perturbation TV",
    9: "frozen model contract",
    10: "model trainability",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Attach a human-readable measurement to the current acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    notes = []
    yield notes.append
    if marker is not None:
        _CRITERIA.setdefault(marker.args[0], [True, []])[1].extend(notes)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    entry = _CRITERIA.setdefault(marker.args[0], [True, []])
    if rep.failed or rep.skipped:
        entry[0] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, notes = _CRITERIA[k]
        line = f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {_CRITERION_NAMES.get(k, '')}"
        if notes:
            line += "  [" + "; ".join(notes) + "]"
        terminalreporter.write_line(line)


# -- shared trained models -------------------------------------------------------------


@pytest.fixture(scope="session")
def shapes_data():
    d = DataSection()
    return train_test(d.classes, d.n_train, d.n_test, d.size, d.seed)


def _train(arch, data):
    train_set, test_set = data
    shape = (3, train_set.images.shape[2], train_set.images.shape[3])
    if arch == "cnn":
        model = models.build_small_cnn(shape, train_set.classes, seed=0)
    else:
        model = models.build_tiny_vit(shape, classes=train_set.classes, seed=0)
    sched = TRAIN_DEFAULTS[arch]
    start = time.process_time()
    report = models.train(model, train_set, sched["epochs"], sched["lr"], seed=0, test=test_set)
    return model, report, time.process_time() - start


@pytest.fixture(scope="session")
def trained_cnn(shapes_data):
    return _train("cnn", shapes_data)


@pytest.fixture(scope="session")
def trained_vit(shapes_data):
    return _train("vit", shapes_data)


@pytest.fixture(scope="session")
def cnn_weights(trained_cnn, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "cnn.lmtw"
    models.save_weights(trained_cnn[0], path)
    return path


@pytest.fixture(scope="session")
def frozen_log():
    """(run name, checksum before, checksum after) for every AM and attack run."""
    return []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

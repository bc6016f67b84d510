import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REPO = Path(__file__).resolve().parents[1]
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _mnist_dir():
    candidates = [os.environ.get("EFFCAP_MNIST_DIR"), REPO / "data" / "mnist", Path.home() / "data" / "mnist"]
    for c in candidates:
        if c and all((Path(c) / f).exists() or (Path(c) / (f + ".gz")).exists() for f in MNIST_FILES):
            return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    found = _mnist_dir()
    if found is None:
        pytest.skip("MNIST IDX files not found (set EFFCAP_MNIST_DIR)")
    return found


def _path(root, name):
    plain = root / name
    return plain if plain.exists() else root / (name + ".gz")


@pytest.fixture(scope="session")
def mnist_loader(mnist_dir):
    from effcap import data

    def load(n_train, n_test):
        train = data.load_idx(_path(mnist_dir, MNIST_FILES[0]), _path(mnist_dir, MNIST_FILES[1]), limit=n_train)
        test = data.load_idx(_path(mnist_dir, MNIST_FILES[2]), _path(mnist_dir, MNIST_FILES[3]), limit=n_test)
        return data.whiten_per_image(train), data.whiten_per_image(test)

    return load


def pytest_collection_modifyitems(config, items):
    if os.environ.get("EFFCAP_LONG") == "1":
        return
    skip = pytest.mark.skip(reason="long-running; set EFFCAP_LONG=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        # a criterion split over several tests takes its worst part
        prev = _CRITERIA.get(number, ("PASS", title))[0]
        worst = max(prev, status, key=("PASS", "SKIP", "FAIL").index)
        _CRITERIA[number] = (worst, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")

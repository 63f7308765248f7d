import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from l1heat.field import GridSpec  # noqa: E402
from l1heat.semigroup import HeatPropagator  # noqa: E402

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    # parametrized criteria: the worst outcome wins and durations add up
    _, previous, spent = _ACCEPTANCE.get(number, (title, "PASS", 0.0))
    rank = {"PASS": 0, "SKIP": 1, "FAIL": 2}
    _ACCEPTANCE[number] = (title, max(previous, status, key=rank.get), spent + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, duration = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title} ({duration:.2f} s)")


@pytest.fixture(scope="session")
def line_spec():
    return GridSpec(1, 20.0, 512)


@pytest.fixture(scope="session")
def line_prop(line_spec):
    return HeatPropagator(line_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

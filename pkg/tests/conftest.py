from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from accelscale.arch_ir import build_efficientnet_b0, build_efficientnet_x_b0  # noqa: E402
from accelscale.cost_model import get_profile  # noqa: E402


@pytest.fixture(scope="session")
def tpu():
    return get_profile("tpu_v3_like")


@pytest.fixture(scope="session")
def gpu():
    return get_profile("gpu_v100_like")


@pytest.fixture(scope="session")
def cpu():
    return get_profile("cpu_like")


@pytest.fixture(scope="session")
def xb0_tpu():
    return build_efficientnet_x_b0("tpu")


@pytest.fixture(scope="session")
def xb0_gpu():
    return build_efficientnet_x_b0("gpu")


@pytest.fixture(scope="session")
def b0():
    return build_efficientnet_b0()


# -- acceptance summary -----------------------------------------------------------------

_CRITERIA: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n = mark.args[0]
    if rep.failed:
        _CRITERIA[n] = "FAIL"
    elif rep.when == "call" and n not in _CRITERIA:
        _CRITERIA[n] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n}: {_CRITERIA[n]}")

"""Shared fixtures: single-threaded BLAS, seeded generators, small scenes."""

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from daccn.synthdata import SceneSpec, generate_scene

_LIMITS = threadpool_limits(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec():
    return SceneSpec(image_h=32, image_w=48, seed=3)


@pytest.fixture(scope="session")
def small_sample(small_spec):
    return generate_scene(small_spec)


@pytest.fixture(scope="session")
def tiny_run_dict():
    """Raw config for a seconds-long CLI run."""
    return {
        "model": {"branch_channels": [4, 4, 6, 6], "input_h": 32, "input_w": 48},
        "data": {"scene": {"image_h": 32, "image_w": 48}, "count": 6},
        "iterations": 4,
    }


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))

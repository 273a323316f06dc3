import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" or not rep.failed:
        return
    num = mark.args[0]
    if not any(r[0] == num for r in ACCEPTANCE):
        ACCEPTANCE.append((num, False, f"error: {call.excinfo.typename}: {call.excinfo.value}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    """report(n, ok, detail) records one acceptance line."""
    def add(num, ok, detail):
        ACCEPTANCE.append((num, bool(ok), detail))
    return add


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

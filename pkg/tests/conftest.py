import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.when == "call" or rep.failed:
        _, prev, details = _criteria.get(number, (title, True, []))
        details += [v for k, v in item.user_properties if k == "detail" and v not in details]
        _criteria[number] = (title, prev and rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, details = _criteria[number]
        extra = f"  ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}{extra}")

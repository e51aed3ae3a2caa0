"""Test-session wiring: path setup and the acceptance summary block."""

import sys
from pathlib import Path

import pytest

# make helpers.py importable from any invocation directory
sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: dict[tuple[int, str], bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, title): acceptance criterion pass/fail reporting")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, title = marker.args
    key = (int(num), str(title))
    if report.when == "call":
        passed = report.passed and _RESULTS.get(key, True)
        _RESULTS[key] = passed
    elif report.failed:
        # setup or teardown crash counts as a failure of the criterion
        _RESULTS[key] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title in sorted(_RESULTS):
        status = "PASS" if _RESULTS[(num, title)] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num}: {title}")

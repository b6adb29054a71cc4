"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary.

Tests opt in with ``@pytest.mark.criterion(n, "title")`` and may attach a
short measurement through the ``measured`` fixture.
"""
import pytest

_LINES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture()
def measured(request):
    notes: list[str] = []
    request.node.user_properties.append(("measured", notes))
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    n, title = mark.args
    notes = next((v for k, v in item.user_properties if k == "measured"), [])
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    detail = f" ({'; '.join(notes)})" if notes else ""
    _LINES[n] = f"[{status}] criterion {n}: {title}{detail}"


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_LINES):
        terminalreporter.write_line(_LINES[n])

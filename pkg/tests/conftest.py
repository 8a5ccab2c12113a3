from __future__ import annotations

import pytest

_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number = getattr(report, "criterion_number", None)
    if number is None:
        return
    # parametrized criteria pass only if every case passes
    verdict, _, elapsed = _CRITERIA.get(number, ("PASS", "", 0.0))
    if not report.passed:
        verdict = "FAIL"
    _CRITERIA[number] = (verdict, report.criterion_title, elapsed + report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion_number, report.criterion_title = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}  ({duration:.1f} s)")

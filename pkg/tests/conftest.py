"""Acceptance bookkeeping: one PASS/FAIL/SKIP line per numbered criterion."""
import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "setup" and report.skipped:
        _RESULTS[number] = ("SKIP", title, str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "")
    elif report.when == "call":
        if report.skipped:
            status = "SKIP"
            detail = str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else detail
        else:
            status = "PASS" if report.passed else "FAIL"
        _RESULTS[number] = (status, title, detail)
    elif report.when == "setup" and report.failed:
        _RESULTS[number] = ("FAIL", title, "setup error")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, detail = _RESULTS[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)

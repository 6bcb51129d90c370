import pytest

_results: dict[int, tuple[str, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    _, failed = _results.setdefault(number, (title, []))
    if report.failed:
        failed.append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, failed = _results[number]
        status = "FAIL" if failed else "PASS"
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")

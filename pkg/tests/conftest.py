"""Collects acceptance results and prints one line per criterion at the end of the run."""

import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _outcomes.setdefault(number, {"title": title, "tests": {}})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _outcomes[mark.args[0]]["tests"]
    entry[item.nodeid] = entry.get(item.nodeid, True) and not (report.failed or report.skipped)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        entry = _outcomes[number]
        ran = entry["tests"]
        if not ran:
            status = "NOT RUN"
        else:
            status = "PASS" if all(ran.values()) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} - {entry['title']} ({len(ran)} tests)")

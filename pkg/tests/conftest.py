import pytest

# criterion number -> title, filled in by tests marked ``acceptance``
_CRITERIA = {}
_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            num, title = m.args
            _CRITERIA[num] = title
            item.user_properties.append(("criterion", num))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _OUTCOMES.get(crit, True)
        _OUTCOMES[crit] = prev and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        if num not in _OUTCOMES:
            status = "NOT RUN"
        else:
            status = "PASS" if _OUTCOMES[num] else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status:7s} {_CRITERIA[num]}")

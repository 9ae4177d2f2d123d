import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        measured = dict(item.user_properties).get("measured", "")
        _RESULTS[mark.args[0]] = (mark.args[1], rep.passed, measured)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, measured = _RESULTS[n]
        line = f"{'PASS' if ok else 'FAIL'}  #{n:<2} {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))

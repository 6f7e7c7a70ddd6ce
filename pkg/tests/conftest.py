import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion, reported as PASS/FAIL")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    prev = item.config._criteria.get(n)
    if prev is None or prev[1]:
        item.config._criteria[n] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter, config):
    crit = config._criteria
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        title, ok, detail = crit[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

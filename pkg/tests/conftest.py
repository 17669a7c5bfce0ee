"""Per-criterion pass/fail lines for the acceptance suite."""

import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def detail():
    """Mutable list a test can append measured values to for the summary line."""
    return []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        info = "; ".join(item.funcargs.get("detail", []) or [])
        _RESULTS[number] = (status, title, info)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, title, info = _RESULTS[n]
        line = f"[{status}] criterion {n}: {title}"
        terminalreporter.write_line(line + (f" ({info})" if info else ""))

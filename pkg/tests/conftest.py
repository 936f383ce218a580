"""Acceptance bookkeeping: one pass/fail line per criterion in the summary."""
import pytest

CRITERIA = {
    1: "gradient oracle",
    2: "quadrature oracle",
    3: "geometry suite",
    4: "sampling uniformity",
    5: "HDR fusion oracle",
    6: "PRT oracle",
    7: "end-to-end overfit",
    8: "ablation directions",
    9: "LDR2HDR rendering-loss direction",
    10: "determinism",
}

_outcomes = {}
_details = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    for n in mark.args:
        _outcomes.setdefault(n, []).append(rep.passed)


@pytest.fixture
def record():
    """``record(n, text)`` attaches a measured value to criterion ``n``."""
    def add(n, text):
        _details.setdefault(n, []).append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        runs = _outcomes.get(n)
        status = "NOT RUN" if not runs else ("PASS" if all(runs) else "FAIL")
        tr.write_line(f"criterion {n:2d} {name:34s} {status}")
        for text in _details.get(n, []):
            tr.write_line(f"    {text}")

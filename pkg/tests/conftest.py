import re

import pytest

CRITERIA = {
    1: "exit predicate truth table",
    2: "confidence formulas",
    3: "token-reduction arithmetic",
    4: "segmenter corpus",
    5: "analyzer oracle equivalence",
    6: "semantic entropy bounds",
    7: "end-to-end replay",
    8: "loop breaker",
    9: "reward and export rules",
    10: "live endpoint smoke",
}

_outcomes: dict[int, list[str]] = {}
_NAME = re.compile(r"test_acceptance\.py::test_c(\d\d)_")


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(n, []).append("skipped" if report.skipped else report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        got = _outcomes.get(n)
        if got is None:
            status = "NOT RUN"
        elif "failed" in got:
            status = "FAIL"
        elif all(o == "skipped" for o in got):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n:2d}  {status:7s} {title}")


@pytest.fixture
def tmp_jsonl(tmp_path):
    return tmp_path / "data.jsonl"

import re

import pytest

CRITERIA = {
    1: "symbolic identities",
    2: "moment oracle",
    3: "Stein solution suite",
    4: "characterization check",
    5: "Haar moments and invariance",
    6: "diffusion calibration",
    7: "headline Kolmogorov bound",
    8: "bound pipeline consistency",
    9: "LIS cross-check",
    10: "smoothing inequality",
}

_outcomes: dict = {}
_PATTERN = re.compile(r"test_criterion_(\d+)_")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    k = int(m.group(1))
    if report.when == "call" or report.failed:
        if report.failed or _outcomes.get(k) != "FAIL":
            _outcomes[k] = "FAIL" if report.failed else ("PASS" if report.passed else "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        if k in _outcomes:
            terminalreporter.write_line(f"criterion {k:2d} ({CRITERIA[k]}): {_outcomes[k]}")

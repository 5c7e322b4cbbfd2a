"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""

import pytest

_LINES = []


class CriterionRecorder:
    def __init__(self, nodeid):
        self.nodeid = nodeid
        self.recorded = False

    def __call__(self, label: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {label}: {detail}"
        _LINES.append(line)
        print(line)
        self.recorded = True
        return passed


@pytest.fixture
def criterion(request):
    rec = CriterionRecorder(request.node.nodeid)
    request.node._criterion = rec
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    rec = getattr(item, "_criterion", None)
    if rec is not None and report.when == "call" and report.failed and not rec.recorded:
        label = item.get_closest_marker("criterion")
        name = label.args[0] if label else item.name
        _LINES.append(f"FAIL  criterion {name}: raised {call.excinfo.typename if call.excinfo else 'error'}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion identifier")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)

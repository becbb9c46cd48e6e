import pytest

from noahsim.scenario import Scenario
from noahsim.workload import ClassSpec

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def one_class_scenario(trace_path=None, **cluster) -> Scenario:
    """One function ``f0``; arrivals from ``trace_path`` if given."""
    sc = Scenario()
    sc.classes = [ClassSpec("f0", peak_rate=0.0)]
    sc.workload.trace = str(trace_path) if trace_path else None
    for k, v in cluster.items():
        setattr(sc.cluster, k, v)
    return sc


@pytest.fixture
def small_scenario():
    """Three hosts, three classes, short ramp: fast end-to-end runs."""
    sc = Scenario()
    sc.cluster.hosts = 3
    sc.cluster.cores = 4
    sc.workload.classes = 3
    sc.workload.peak_rate = 15.0
    sc.workload.ramp_duration = 5.0
    return sc

import pytest

from calabi.flow import RunConfig, run
from calabi.geometry import KahlerClass, ManifoldParams

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion for the terminal summary."""

    def record(criterion: str, passed: bool, detail: str = "") -> bool:
        tag = "PASS" if passed else "FAIL"
        line = f"[{tag}] {criterion}" + (f": {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _series(n, k, a0, b0, m=401, interval=0.01):
    return run(RunConfig(ManifoldParams(n, k), KahlerClass(a0, b0), m=m, snapshot_interval=interval))


@pytest.fixture(scope="session")
def collapse_series():
    return _series(2, 2, 1, 5)


@pytest.fixture(scope="session")
def contraction_series():
    return _series(2, 1, 1, 5)


@pytest.fixture(scope="session")
def shrink_series():
    return _series(2, 1, 1, 3)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("d2e", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("d2e")

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, and fail the test when it did not pass."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _VERDICTS[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])

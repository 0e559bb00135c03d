import warnings

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "singsde", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("singsde")


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


# one summary line per acceptance criterion, shown after the run
CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(n: int, ok: bool, text: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}"
        CRITERIA[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])

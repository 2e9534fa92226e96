import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_RESULTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion for the end-of-run summary."""

    def record(label: str, passed: bool, detail: str = "") -> bool:
        line = f"{label}: {'PASS' if passed else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _RESULTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)

import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}
    config.addinivalue_line("markers", "slow: trains models for several minutes")


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records one acceptance line for the summary."""
    def record(n, passed, detail):
        request.config.stash[_CRITERIA][n] = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

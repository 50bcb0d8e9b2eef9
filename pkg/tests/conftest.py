import time

import pytest
from hypothesis import HealthCheck, settings

from fracvi import calibration

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

STUDY_REPLICAS = 500
REPORT = pytest.StashKey[list]()


class StudyCache:
    """Full coverage studies at the acceptance scale, run once per session."""

    def __init__(self):
        self._results = {}
        self.seconds = {}

    def __call__(self, name: str) -> calibration.StudyResult:
        if name not in self._results:
            start = time.perf_counter()
            self._results[name] = calibration.run_study(calibration.preset(name, replicas=STUDY_REPLICAS))
            self.seconds[name] = time.perf_counter() - start
        return self._results[name]


@pytest.fixture(scope="session")
def studies():
    return StudyCache()


def pytest_configure(config):
    config.stash[REPORT] = []


@pytest.fixture
def report(request):
    """Append ``(criterion, passed, detail)`` for the end-of-run acceptance summary."""
    return request.config.stash[REPORT].append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(REPORT, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(lines):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

import numpy as np
import pytest

from megbdl.classifier import build_artifacts
from megbdl.dictionary import build_dictionary
from megbdl.head import build_sensor_array, build_source_space


@pytest.fixture(scope="session")
def small_head():
    space = build_source_space(64, 8, rng_seed=1)
    sensors = build_sensor_array(32)
    return space, sensors


@pytest.fixture(scope="session")
def small_dictionary(small_head):
    return build_dictionary(*small_head)


@pytest.fixture(scope="session")
def small_artifacts(small_dictionary):
    return build_artifacts(small_dictionary, tau=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(number, name, passed, detail):
        lines.append(f"criterion {number} [{name}]: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

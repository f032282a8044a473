import numpy as np
import pytest

from eventail.simulator import SimConfig, sample_scene

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def scene():
    return sample_scene(SimConfig(), seed=11)


@pytest.fixture(scope="session")
def pure_scene():
    return sample_scene(SimConfig(pure_rotation=True), seed=12)


@pytest.fixture(scope="session")
def scenes():
    return [sample_scene(SimConfig(), seed=100 + i) for i in range(5)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion, echoed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(line: str):
        print(line)
        lines.append(line)

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

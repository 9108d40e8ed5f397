import numpy as np
import pytest

from vkplate.fespace import build_space
from vkplate.mesh import build_mesh


@pytest.fixture(scope="session")
def p2_square_small():
    return build_space(build_mesh(1.0, 6, 6), 2)


@pytest.fixture(scope="session")
def p2_square():
    return build_space(build_mesh(1.0, 10, 10), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from quinticmf.hartree import GalerkinFlow
from quinticmf.manybody import make_setup


@pytest.fixture(scope="session")
def desk():
    """d=1, n=16, L=2 pi, K=2, alpha=1/4, lam=1, phi0 = (0.8, 0.6)."""
    return make_setup(phi0=(0.8, 0.6))


@pytest.fixture(scope="session")
def desk_flow(desk):
    return GalerkinFlow(desk.phi0, desk.tensor, desk.basis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])

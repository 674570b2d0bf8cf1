import numpy as np
import pytest

from nsdarcy.mesh import build_layered_rectangle
from nsdarcy.operator import assemble_pencil


@pytest.fixture(scope="session")
def mesh4():
    return build_layered_rectangle(4, 4, 4)


@pytest.fixture(scope="session")
def mesh8():
    return build_layered_rectangle(8, 8, 8)


@pytest.fixture(scope="session")
def pencil4(mesh4):
    return assemble_pencil(mesh4, k=1.0, mu=1.0, beta=1.0, variant="bjs")


@pytest.fixture(scope="session")
def pencil4_bj(mesh4):
    return assemble_pencil(mesh4, k=1.0, mu=1.0, beta=0.01, variant="bj")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])

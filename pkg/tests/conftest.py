import pytest

from yamabe_gluing.approx import build_approx
from yamabe_gluing.balance import make_configuration, preset_points
from yamabe_gluing.gluing import ModelSolver
from yamabe_gluing.spaces import Discretization
from yamabe_gluing.verify import VerifyContext


@pytest.fixture(scope="session")
def triangle():
    pts, q, dim = preset_points("triangle-N3")
    return make_configuration(pts, q, 1e-2, dim)


@pytest.fixture(scope="session")
def triangle_approx(triangle):
    return build_approx(triangle)


@pytest.fixture(scope="session")
def triangle_disc(triangle):
    return Discretization(triangle)


@pytest.fixture(scope="session")
def triangle_model(triangle_disc):
    return ModelSolver(triangle_disc)


@pytest.fixture(scope="session")
def verify_context():
    """Shared by the acceptance suite and the nonlinear tests so the triangle solve runs once."""
    return VerifyContext()


@pytest.fixture(scope="session")
def triangle_solution(verify_context):
    return verify_context.solution()


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from stmpc.config import default_config
from stmpc.dynamics import AgentModel
from stmpc.protocol import CostWeights, TerminalSet
from stmpc.solver import SolverParams

# acceptance outcomes, printed as one line each at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def model():
    return AgentModel()


@pytest.fixture(scope="session")
def weights():
    return CostWeights(Q=np.diag([0.6, 0.6]), Q_ij=np.diag([0.5, 0.5]), R=[[1.0]],
                       P=[[8.05, 2.90], [2.90, 3.48]], hbar=1.1)


@pytest.fixture(scope="session")
def terminal(weights):
    return TerminalSet(weights.P, np.sqrt(6.0))


@pytest.fixture(scope="session")
def params(weights, terminal):
    return SolverParams(N=5, weights=weights, terminal=terminal, gain=[-0.87, -1.04], delta=3.58)

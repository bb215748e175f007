import pytest

from readout_transitions.constants import mhz
from readout_transitions.environment import EnvironmentModel, ReadoutChannel, eta_from_chi
from readout_transitions.spectrum import TransmonParams, eigensystem

E_C = mhz(36.0)
OMEGA_Q = mhz(758.0)
OMEGA_RES = mhz(9227.0)
KAPPA = mhz(1.80)
CHI = mhz(0.90)
OMEGA_IN = mhz(9280.0)
TEMPERATURE = 0.016


@pytest.fixture(scope="session")
def params():
    return TransmonParams.from_qubit_frequency(E_C, OMEGA_Q)


@pytest.fixture(scope="session")
def spec(params):
    return eigensystem(params, n_levels=12)


@pytest.fixture(scope="session")
def env():
    eta = eta_from_chi(CHI, E_C, OMEGA_Q, OMEGA_RES)
    return EnvironmentModel(channel=ReadoutChannel(OMEGA_RES, KAPPA, eta, CHI))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

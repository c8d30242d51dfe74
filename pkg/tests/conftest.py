import numpy as np
import pytest

from rankflux import coefficients as C
from rankflux import initial, pme


@pytest.fixture(scope="session")
def const_coeffs():
    return C.CoefficientPair(C.constant(0.0), C.constant(1.0))


@pytest.fixture(scope="session")
def lin_coeffs():
    return C.CoefficientPair(C.linear(), C.constant(1.0))


@pytest.fixture(scope="session")
def normal_law():
    return initial.normal()


@pytest.fixture(scope="session")
def R_const(const_coeffs, normal_law):
    """Driftless unit-diffusion limit on (-8, 8) x [0, 1], dx = 0.05."""
    return pme.solve_pme(normal_law, C.antiderivatives(const_coeffs), (-8.0, 8.0), 1.0, 0.05, 1e-3)


@pytest.fixture(scope="session")
def R_lin(lin_coeffs, normal_law):
    """b(a) = a, sigma = 1 limit on (-8, 9) x [0, 1], dx = 0.05."""
    return pme.solve_pme(normal_law, C.antiderivatives(lin_coeffs), (-8.0, 9.0), 1.0, 0.05, step_multiple=100)


@pytest.fixture(scope="session")
def R_const_spde(const_coeffs, normal_law):
    """Grid on which the field times and noise-cell midpoints are grid times."""
    return pme.solve_pme(normal_law, C.antiderivatives(const_coeffs), (-8.0, 8.0), 0.5, 0.05, 6.25e-4)


@pytest.fixture(scope="session")
def R_lin_spde(lin_coeffs, normal_law):
    return pme.solve_pme(normal_law, C.antiderivatives(lin_coeffs), (-8.0, 8.0), 0.5, 0.05, 6.25e-4)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

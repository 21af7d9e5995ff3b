import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from prandtl_lab.spectral import find_tau


def exact_tau(C):
    """Closed-form eigenvalue of the shear-layer problem, derived independently."""
    return -np.sqrt(C) * np.exp(1j * np.pi / 4)


def exact_W(z, C):
    """W' is proportional to exp(z^2/(2 tau))/(tau - z^2)^2; integrate on a fine grid."""
    tau = exact_tau(C)
    fine = np.linspace(-14.0, 14.0, 280001)
    dW = np.exp(fine ** 2 / (2 * tau)) / (tau - fine ** 2) ** 2
    W = cumulative_trapezoid(dW, fine, initial=0.0)
    W = W / W[-1]
    return np.interp(z, fine, W.real) + 1j * np.interp(z, fine, W.imag)


@pytest.fixture(scope="session")
def sol_c1():
    return find_tau(1.0, seeds=[-0.6 - 0.6j])


@pytest.fixture(scope="session")
def shear_flow():
    from prandtl_lab.baseflow import analytic_profile
    return analytic_profile("critical_shear")


@pytest.fixture(scope="session")
def shear_spec(shear_flow):
    from prandtl_lab.evolution import spectral_for_flow
    return spectral_for_flow(shear_flow)


@pytest.fixture(scope="session")
def shear_ing(shear_flow, shear_spec):
    from prandtl_lab.quasimode import prepare
    return prepare(shear_flow, shear_spec)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])

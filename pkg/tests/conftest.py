"""Shared fixtures: bundled systems, the analytic 2-bus network, and solved
operating points reused across test modules."""

import numpy as np
import pytest

from vstab import load_case
from vstab.acpf import LoadDirection, solve_power_flow

# slack behind a pure reactance feeding one load bus at 0.8 power factor
# (Q = 0.75 P). Closed forms: P_max = E^2 cos(phi) / (2 X (1 + sin(phi)))
# = E^2 / (4 X) at this power factor, and |Z_th| = X.
TWO_BUS_X = 0.1
TWO_BUS = """
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0   0  0 0 1 1.0 0 345 1 1.1 0.9;
 2 1 100 75 0 0 1 1.0 0 345 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 999 -999 1.0 100 1 999 -999;
];
mpc.branch = [
 1 2 0.0 0.1 0.0 250 250 250 0 0 1 -360 360;
];
"""


@pytest.fixture(scope="session")
def two_bus():
    return load_case(TWO_BUS)


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case57():
    return load_case("case57")


@pytest.fixture(scope="session")
def case118():
    return load_case("case118")


@pytest.fixture(scope="session")
def state14(case14):
    st = solve_power_flow(case14)
    assert st.converged
    return st


@pytest.fixture(scope="session")
def state57(case57):
    st = solve_power_flow(case57)
    assert st.converged
    return st


def ramp_states(model, k_values, direction=None):
    """Converged states along a warm-started ramp; stops at non-convergence."""
    direction = direction or LoadDirection.proportional(model)
    out = []
    st = None
    for k in k_values:
        st = solve_power_flow(model, k=float(k), direction=direction,
                              warm_start=st)
        if not st.converged:
            break
        out.append(st)
    return out


def ramp_grid(k_start, k_end, step):
    return np.round(np.arange(k_start, k_end + step / 2, step), 9)

import numpy as np
import pytest

from lanefree.ctm import Profile, Scenario
from lanefree.harness import load_scenario
from lanefree.model import ModelParams

# Acceptance results collected by tests/test_acceptance.py, echoed in the
# terminal summary so they survive output capturing.
ACCEPTANCE_LINES: list = []


def make_scenario(
    n=2,
    length=0.5,
    mainstream_a=0.0,
    mainstream_b=0.0,
    rho_a=0.0,
    rho_b=0.0,
    beta_a=0.0,
    beta_b=0.0,
    onramps_a=None,
    onramps_b=None,
    horizon=6,
    params=None,
    eps_min=0.16,
    eps_max=0.84,
):
    """Small constant-demand scenario for unit tests."""
    ra = [None] * n
    rb = [None] * n
    for i, v in (onramps_a or {}).items():
        ra[i] = Profile.constant(v)
    for i, v in (onramps_b or {}).items():
        rb[i] = Profile.constant(v)
    return Scenario(
        lengths=np.full(n, length),
        exit_rates_a=beta_a,
        exit_rates_b=beta_b,
        onramp_demand_a=ra,
        onramp_demand_b=rb,
        mainstream_demand_a=Profile.constant(mainstream_a),
        mainstream_demand_b=Profile.constant(mainstream_b),
        initial_density_a=rho_a,
        initial_density_b=rho_b,
        eps_min=eps_min,
        eps_max=eps_max,
        horizon_steps=horizon,
        params=params or ModelParams(),
    )


@pytest.fixture(scope="session")
def uncongested():
    return load_scenario("uncongested")


@pytest.fixture(scope="session")
def congested():
    return load_scenario("congested")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

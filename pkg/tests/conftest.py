import pytest

from kdvb_shock.flux import ShockSetup, burgers
from kdvb_shock.harness import ScenarioConfig
from kdvb_shock.profile import solve_profile


@pytest.fixture(scope="session")
def setup():
    return ShockSetup(1.0, -1.0, 0.1, 1.0, burgers())


@pytest.fixture(scope="session")
def profile(setup):
    return solve_profile(setup)


@pytest.fixture(scope="session")
def small_config():
    """Short, coarse scenario for plumbing tests (a few seconds per run)."""
    return ScenarioConfig(L=40.0, N=800, cell_nodes=32, T=10.0, dt=0.01, dt_out=0.1,
                          snapshot_times=(0.0, 5.0))


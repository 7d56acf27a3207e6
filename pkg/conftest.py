import numpy as np
import pytest

from config import ExperimentSpec, SacConfig, ScenarioConfig, SweepConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-length training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-length training run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def scenario():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_sac():
    return SacConfig(
        batch_size=8,
        buffer_size=32,
        hidden_layers=1,
        hidden_nodes=16,
        critic_lr=1e-3,
        actor_lr=1e-3,
        steps=20,
        log_interval=10,
    )


@pytest.fixture
def small_spec(small_sac):
    return ExperimentSpec(
        sac=small_sac,
        sweeps=SweepConfig(distance_points=5, workers=1),
        monte_carlo_iterations=6,
        seed=7,
    )

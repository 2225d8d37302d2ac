import numpy as np
import pytest

from terasec.constellation import GroundStation, WalkerConfig, build_walker
from terasec.env import SecWindow
from terasec.sec_sim import ComputeParams, RewardParams
from terasec.thz_link import ArrayConfig, LinkBudgetParams, band_preset
from terasec.traffic import TrafficConfig


def make_env(seed: int = 1, steps: int = 10, n_sources: int = 10) -> SecWindow:
    """Default-scenario window used across the test suite."""
    c = build_walker(WalkerConfig())
    return SecWindow(
        c, GroundStation(), TrafficConfig(seed=seed),
        ArrayConfig(), LinkBudgetParams(),
        band_preset("thz", "offloading"), band_preset("thz", "outcome"),
        ComputeParams(), RewardParams(),
        n_sources=n_sources, steps=steps, source_seed=seed)


@pytest.fixture(scope="session")
def default_constellation():
    return build_walker(WalkerConfig())


@pytest.fixture(scope="session")
def small_env():
    """One shared short default-scenario window (read-mostly tests only)."""
    return make_env(seed=1, steps=10)


def random_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    x = rng.exponential(size=n)
    return x / x.sum()

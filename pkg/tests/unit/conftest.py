from pathlib import Path

import numpy as np
import pytest

from tontine_flow.market import PathSet
from tontine_flow.mortality import DeathProbPaths
from tontine_flow.tontine import ScenarioConfig

here = Path(__file__).parent


@pytest.fixture
def fixture_path():
    return here / "fixtures"


@pytest.fixture
def make_paths():
    """Factory for path sets with constant or supplied gross returns."""

    def factory(
        n_paths: int = 1,
        M: int = 30,
        n_assets: int = 2,
        gross=1.0,
        delta: float = None,
        cpi=1.0,
        seed: int = None,
    ) -> PathSet:
        gross = np.broadcast_to(np.asarray(gross, dtype=float), (n_paths, M, n_assets)).copy()
        cpi_index = np.ones((n_paths, M + 1))
        cpi_index[:, 1:] = np.broadcast_to(np.asarray(cpi, dtype=float), (n_paths, M))
        deltas = (
            DeathProbPaths(np.full((n_paths, M), float(delta)), 65, 2022)
            if delta is not None
            else None
        )
        return PathSet(gross, cpi_index, deltas, seed=seed)

    return factory


@pytest.fixture
def small_scenario():
    """Three year scenario with wealth in units where withdrawals are material."""
    return ScenarioConfig(
        W0=100.0,
        L0=100.0,
        T=3,
        M=3,
        q_min=4.0,
        q_max=8.0,
        varrho=0.001,
        mu_bc=0.02,
        alpha=0.2,
        gamma=1.0,
        epsilon=-1e-4,
    )


@pytest.fixture
def random_paths(make_paths):
    """Lognormal returns with a flat death probability."""

    def factory(n_paths: int = 64, M: int = 3, seed: int = 0, delta: float = 0.02) -> PathSet:
        rng = np.random.default_rng(seed)
        gross = np.exp(rng.normal([0.05, 0.01], [0.18, 0.04], size=(n_paths, M, 2)))
        return make_paths(n_paths, M, 2, gross=gross, delta=delta, seed=seed)

    return factory

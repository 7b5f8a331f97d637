# conftest.py
import numpy as np
import pytest

from channel_model import ClusterGeometry, LocalCluster, default_geometry_spec, random_geometry
from config import preset_config


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo checks that take seconds to minutes")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_covariance(rng: np.random.Generator, M: int, rank: int = None) -> np.ndarray:
    """Random complex PSD matrix with a non-constant diagonal."""
    rank = M if rank is None else rank
    X = rng.standard_normal((M, rank)) + 1j * rng.standard_normal((M, rank))
    C = X @ X.conj().T / rank
    d = np.linspace(0.5, 2.0, M)
    return (C * np.sqrt(np.outer(d, d))) / 2.0


def complex_gaussian(rng: np.random.Generator, C: np.ndarray, n: int) -> np.ndarray:
    """n rows drawn from CN(0, C)."""
    L = np.linalg.cholesky(C + 1e-12 * np.eye(C.shape[0]))
    w = (rng.standard_normal((n, C.shape[0])) + 1j * rng.standard_normal((n, C.shape[0]))) / np.sqrt(2.0)
    return w @ L.T


@pytest.fixture
def default_geometry_32():
    return random_geometry(default_geometry_spec(32), np.random.default_rng(5))


@pytest.fixture
def on_grid_geometry():
    """M = 16, paths on the 32-point angle grid, one local cluster on antennas 0..7."""
    local = LocalCluster(aoas=np.array([-45.0, 11.25]), powers=np.array([0.4, 0.2]), antenna_mask=np.arange(8))
    return ClusterGeometry(
        common_aoas=np.array([-22.5, 33.75]),
        common_powers=np.array([0.1, 0.3]),
        local_clusters=(local,),
        num_antennas=16,
    )


@pytest.fixture
def tiny_config():
    """Desk geometry with very few trials so experiments finish in seconds."""
    return preset_config(
        "desk",
        geometry={"num_antennas": 16, "local_clusters": [
            {"num_paths": 3, "aoa_range": [-60.0, 0.0], "power": 0.7, "antennas": [[1, 4]]},
            {"num_paths": 3, "aoa_range": [0.0, 60.0], "power": 0.5, "antennas": [[13, 16]]},
        ]},
        lambdas=[1.0, 2.0],
        sample_sizes=[100, 400],
        num_geometries=1,
        num_groups=2,
        num_channel_draws=5,
        num_users=2,
        seed=11,
    )

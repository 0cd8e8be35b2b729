import os
import sys
import numpy as np
import pytest

# プロジェクトルートのパスを追加
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from mcarma.models.levy import DriverSpec
from mcarma.models.model_core import KroneckerIndex, ParameterSpace, StateSpaceModel
from mcarma.services.levy.levy_service import LevyService
from mcarma.services.model_core.model_core_service import STUDY_THETA_1, ModelCoreService


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte-Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo acceptance test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def make_stable_model():
    """
    ランダムな安定モデル（s = N なので Σ_h は正定値）
    """
    def _make(rng: np.random.Generator, N: int, d: int) -> StateSpaceModel:
        M = rng.standard_normal((N, N))
        shift = np.max(np.linalg.eigvals(M).real) + 0.5 + rng.uniform()
        L = rng.standard_normal((N, N))
        return StateSpaceModel(
            A=M - shift * np.eye(N),
            B=rng.standard_normal((N, N)),
            C=rng.standard_normal((d, N)),
            sigma_L=L @ L.T + 0.1 * np.eye(N),
        )
    return _make


@pytest.fixture
def car1_space():
    return ParameterSpace(name="car1", kronecker=KroneckerIndex(m=(1,)), ma_cap=0)


@pytest.fixture
def car1_theta():
    # (a, σ) = (-1, 1)
    return np.array([-1.0, 1.0])


@pytest.fixture
def study_sigma():
    return LevyService.driver_moments(DriverSpec.study_nig()).cov


@pytest.fixture
def study_truth(study_sigma):
    """
    space3 の真のモデル θ₀^(1)（κ = 0 の成分は space3 に存在しない。Σ^L は NIG 駆動過程の共分散）
    """
    space = ModelCoreService.study_space("space3")
    theta = space.theta_from(STUDY_THETA_1[:space.n_structural], study_sigma)
    return space, theta, ModelCoreService.echelon_model(space, theta)

# Gemeinsame Fixtures der Testsuite.

from pathlib import Path

import numpy as np
import pytest

from skewnorm_cv.dist_core import Params, sample
from skewnorm_cv.pem import PemOptions

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def symmetric_fixture() -> Path:
    return DATA_DIR / "symmetric_sample.txt"


@pytest.fixture
def planted_panel() -> Path:
    return DATA_DIR / "planted_panel_long.csv"


@pytest.fixture
def fast_opts() -> PemOptions:
    # lockere Toleranz für schnelle CV-Tests
    return PemOptions(tol=1e-6, max_iter=200)


@pytest.fixture
def skewed_sample() -> np.ndarray:
    return sample(200, Params.from_natural(1.0, 2.0, 3.0), seed=11)


@pytest.fixture
def normal_sample() -> np.ndarray:
    return sample(200, Params.from_natural(0.0, 1.0, 0.0), seed=5)


def make_sample(n: int, alpha: float, seed: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    return sample(n, Params.from_natural(mu, sigma, alpha), seed)

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fetchcache.model import Exogenous, ModelConfig, StorageState  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def random_exogenous(rng, num_entities, p=0.5, scale=10.0):
    m = num_entities - 1
    return Exogenous(rng.random(num_entities) < p, rng.random(num_entities) * scale,
                     rng.random() * scale, rng.random(m) * scale, rng.random(m) * scale)


def random_state(rng, num_entities):
    return StorageState.from_index(int(rng.integers(1 << num_entities)), num_entities)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def m2_config():
    return ModelConfig(num_nodes=2, gamma=0.9, request_probs=(0.5, 0.3, 0.2),
                       rho_means=(4.0, 2.0, 3.0), lambda_cloud_mean=10.0,
                       lambda_in_means=(3.0, 5.0), lambda_out_means=(2.0, 4.0))

import numpy as np
import pytest
import torch

from dove.models import ModelConfig

SMALL = ModelConfig(width=32, depth=1, heads=2, vae_width=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return SMALL


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)

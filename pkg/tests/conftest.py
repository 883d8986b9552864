import numpy as np
import pytest
import torch

from omniqa.dataset_manager import SyntheticDatasetManager, SyntheticSpec, synthetic_reference
from omniqa.model import ModelConfig
from omniqa.viewpoint import DetectorConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def reference():
    """A 64x128 textured panorama."""
    return synthetic_reference(64, np.random.default_rng(7))


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(viewport_size=32, erp_height=64, width_divisor=16, seed=0)


@pytest.fixture
def tiny_detector_cfg():
    return DetectorConfig(n_viewpoints=6, d_th=30.0)


@pytest.fixture(scope='session')
def synthetic_db(tmp_path_factory):
    """Four references, two types, five levels at 64x128."""
    out = tmp_path_factory.mktemp('synth')
    spec = SyntheticSpec(n_refs=4, types=('blur', 'noise'), height=64, seed=3)
    return SyntheticDatasetManager(str(out), spec).create_dataset()


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield

"""
Test Configuration and Fixtures
Version: 1.0

Tiny scene, model and dataset fixtures: a 16x16 scene with a coarse
factor grid and thick arm/cube so shapes survive the low resolution, and
a two-stage VAE small enough to train for a handful of steps.
"""

import numpy as np
import pytest

from schemas import GbtConfig, MlpConfig, ModelConfig, SceneConfig, TrainConfig
from services.scene.factors import FactorSpec
from services.scene.sampler import generate_records


# ============================================================================
# SCENE FIXTURES
# ============================================================================

TINY_CARDINALITIES = (3, 3, 3, 3, 3, 2, 12)


@pytest.fixture(scope="session")
def tiny_spec() -> FactorSpec:
    """Default factor ranges on a coarse grid; the hue axis keeps all 12 hues."""
    return FactorSpec.default(TINY_CARDINALITIES)


@pytest.fixture(scope="session")
def tiny_scene() -> SceneConfig:
    return SceneConfig(resolution=16, arm_thickness=0.4, cube_edge=0.8)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec, tiny_scene):
    return generate_records(tiny_spec, tiny_scene, 120, seed=0)


@pytest.fixture(scope="session")
def tiny_pairs(tiny_spec, tiny_scene):
    return generate_records(tiny_spec, tiny_scene, 30, seed=1, pairs=True)


# ============================================================================
# MODEL FIXTURES
# ============================================================================

@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(resolution=16, latent_dim=3, base_channels=2, fc_width=8)


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(batch_size=4, total_steps=6, log_interval=2, seed=0)


@pytest.fixture
def fast_gbt() -> GbtConfig:
    return GbtConfig(n_trees=5, max_depth=2, min_samples_leaf=1)


@pytest.fixture
def fast_mlp() -> MlpConfig:
    return MlpConfig(hidden=[8, 8], epochs=2, batch_size=2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)

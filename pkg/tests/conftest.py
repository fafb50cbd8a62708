"""Shared fixtures: tiny configs and volumes sized for fast CPU runs."""

import numpy as np
import pytest
import torch

from hydranet.ingest import GridSpec, ZStackVolume
from hydranet.losses import LossConfig
from hydranet.model import ModelConfig, init_model
from hydranet.sampling import CurriculumSchedule
from hydranet.training import TrainConfig

torch.set_num_threads(2)


@pytest.fixture
def tiny_model_config():
    # levels=2 keeps the stride at 2 so 8x8 inputs are valid
    return ModelConfig(levels=2, base_filters=4, dropout_rate=0.15)


@pytest.fixture
def tiny_model(tiny_model_config):
    return init_model(tiny_model_config, 0)


@pytest.fixture
def tiny_volume():
    """8x8 grid, 6 months, activity in a fixed corner block of the sb channel."""
    rng = np.random.default_rng(42)
    data = np.zeros((6, 3, 8, 8), dtype=np.float32)
    data[:, 0, 1:3, 1:3] = rng.uniform(0.5, 2.0, size=(6, 2, 2)).astype(np.float32)
    grid = GridSpec(height=8, width=8)
    return ZStackVolume(data, month_ids=list(range(6)), grid=grid)


@pytest.fixture
def loss_config():
    return LossConfig()


@pytest.fixture
def fast_train_config():
    return TrainConfig(
        seed=123,
        epochs=2,
        batches_per_epoch=2,
        batch_size=2,
        checkpoint_every=1,
        patch_size=8,
    )


@pytest.fixture
def fast_schedule():
    return CurriculumSchedule(ramp_epochs=2)

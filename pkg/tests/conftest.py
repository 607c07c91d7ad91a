"""Fixtures for necklab tests."""

from pathlib import Path

import numpy as np
import pytest

from necklab.config import ExperimentManifest, build_manifest, resolve_options
from necklab.data import IdentityDataset, SyntheticBlobConfig, make_blobs
from necklab.model import BackboneConfig
from necklab.sampler import PKSamplerConfig
from necklab.training import ScheduleConfig, TrainConfig

TINY_BLOCKS = (8, 16)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def blob_config() -> SyntheticBlobConfig:
    """Small synthetic dataset: 6 identities x 6 samples of 8x8, two cameras."""
    return SyntheticBlobConfig(identities=6, samples=6, size=8, noise=0.1, cameras=2, seed=0)


@pytest.fixture
def blobs(blob_config: SyntheticBlobConfig) -> IdentityDataset:
    """Synthetic identity dataset."""
    return make_blobs(blob_config)


@pytest.fixture
def backbone_config() -> BackboneConfig:
    """Two-block backbone for 1x8x8 images."""
    return BackboneConfig((1, 8, 8), TINY_BLOCKS)


@pytest.fixture
def tiny_schedule() -> ScheduleConfig:
    """Three-epoch schedule with one warmup epoch and one decay."""
    return ScheduleConfig(
        base_lr=1e-3,
        warmup_epochs=1,
        decay_epochs=(2,),
        decay_factors=(0.1,),
        total_epochs=3,
    )


@pytest.fixture
def tiny_train_config(tiny_schedule: ScheduleConfig) -> TrainConfig:
    """Training config small enough to run in a test."""
    return TrainConfig(
        schedule=tiny_schedule,
        sampler=PKSamplerConfig(p=3, k=2),
        blocks=TINY_BLOCKS,
        iters_per_epoch=2,
        seed=7,
    )


@pytest.fixture
def tiny_options(tmp_path: Path) -> dict[str, str]:
    """Manifest options for a fast end-to-end run on synthetic blobs."""
    return {
        "run.id": "tiny",
        "run.output_dir": str(tmp_path / "runs"),
        "seed": "3",
        "data.train.kind": "blobs",
        "data.blobs.identities": "6",
        "data.blobs.samples": "6",
        "data.blobs.size": "8",
        "model.blocks": "8, 16",
        "sampler.p": "2",
        "sampler.k": "2",
        "schedule.base_lr": "0.001",
        "schedule.warmup_epochs": "1",
        "schedule.decay_epochs": "2",
        "schedule.decay_factors": "0.1",
        "schedule.total_epochs": "3",
        "schedule.iters_per_epoch": "2",
        "eval.k1": "3",
        "eval.k2": "2",
        "eval.max_rank": "10",
    }


@pytest.fixture
def tiny_manifest(tiny_options: dict[str, str]) -> ExperimentManifest:
    """Resolved manifest built from the tiny options."""
    return build_manifest(resolve_options(tiny_options))

"""Test PK sampling and the batch pipeline."""

import numpy as np
import pytest

from necklab.exceptions import ConfigError, DataError
from necklab.sampler import BatchPipeline, PKSamplerConfig, iteration_rng, sample_pk_batch
from necklab.transforms import REAConfig

INDEX = {0: np.arange(0, 4), 1: np.arange(4, 6), 2: np.array([6]), 3: np.arange(7, 10)}


def test_batch_is_grouped_by_identity() -> None:
    """Test P distinct identities with K samples each, stored consecutively."""
    labels = np.repeat([0, 1, 2, 3], [4, 2, 1, 3])
    cfg = PKSamplerConfig(p=3, k=2)

    batch = sample_pk_batch(INDEX, cfg, np.random.default_rng(0))

    assert batch.size == cfg.batch_size == 6
    groups = labels[batch].reshape(3, 2)
    assert (groups == groups[:, :1]).all()
    assert len(set(groups[:, 0].tolist())) == 3


def test_small_identity_is_drawn_with_replacement() -> None:
    """Test an identity with fewer than K samples repeats its samples."""
    cfg = PKSamplerConfig(p=2, k=3)

    index = {0: np.array([0]), 1: np.array([1, 2, 3])}

    batch = sample_pk_batch(index, cfg, np.random.default_rng(1))

    assert batch.tolist().count(0) == 3
    assert sorted(batch[batch != 0].tolist()) == [1, 2, 3]


def test_too_few_identities() -> None:
    """Test sampling fails when the dataset has fewer than P identities."""
    with pytest.raises(DataError):
        sample_pk_batch({0: np.arange(3)}, PKSamplerConfig(p=2, k=2), np.random.default_rng(0))


@pytest.mark.parametrize(("p", "k"), [(1, 4), (4, 1)])
def test_sampler_config_validation(p: int, k: int) -> None:
    """Test P and K below two are refused."""
    with pytest.raises(ConfigError):
        PKSamplerConfig(p=p, k=k)


def test_iteration_streams_are_independent() -> None:
    """Test generators differ per stream and iteration but repeat per counter."""
    first = iteration_rng(5, 1, 10).random(4)

    np.testing.assert_array_equal(first, iteration_rng(5, 1, 10).random(4))
    assert not np.array_equal(first, iteration_rng(5, 2, 10).random(4))
    assert not np.array_equal(first, iteration_rng(5, 1, 11).random(4))


def _pipeline(seed: int = 4) -> BatchPipeline:
    images = np.random.default_rng(0).standard_normal((10, 1, 8, 8))
    labels = np.repeat([0, 1, 2, 3], [4, 2, 1, 3])
    return BatchPipeline(images, labels, INDEX, PKSamplerConfig(2, 2), REAConfig(p=1.0), seed)


def test_pipeline_batches_do_not_depend_on_order() -> None:
    """Test batch n is identical whichever batches were built before it."""
    forward = _pipeline()
    for iteration in range(5):
        forward.batch(iteration)
    images, labels = forward.batch(5)

    fresh_images, fresh_labels = _pipeline().batch(5)

    np.testing.assert_array_equal(images, fresh_images)
    np.testing.assert_array_equal(labels, fresh_labels)


def test_pipeline_applies_erasing() -> None:
    """Test erasing changes images but never the source array."""
    pipeline = _pipeline()
    original = pipeline.images.copy()

    images, _ = pipeline.batch(0)

    np.testing.assert_array_equal(pipeline.images, original)
    assert not np.array_equal(images, original[pipeline.indices(0)])

"""PK identity sampling and per-iteration batch preparation."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .const import CONF_K, CONF_P, DEFAULT_K, DEFAULT_P, STREAM_ERASING, STREAM_SAMPLER
from .exceptions import ConfigError, DataError
from .transforms import REAConfig, random_erase

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class PKSamplerConfig:
    """P identities with K samples each per batch."""

    p: int = DEFAULT_P
    k: int = DEFAULT_K

    def __post_init__(self) -> None:
        """Validate P and K."""
        if self.p < 2:
            raise ConfigError(f"P must be at least 2, got {self.p}", CONF_P)
        if self.k < 2:
            raise ConfigError(f"K must be at least 2, got {self.k}", CONF_K)

    @property
    def batch_size(self) -> int:
        """Return B = P * K."""
        return self.p * self.k


def iteration_rng(seed: int, stream: int, iteration: int) -> np.random.Generator:
    """Return the generator of one (seed, stream, iteration) counter."""
    return np.random.default_rng([seed, stream, iteration])


def sample_pk_batch(
    index: Mapping[int, np.ndarray], cfg: PKSamplerConfig, rng: np.random.Generator
) -> np.ndarray:
    """Return P * K sample indices grouped by identity.

    Identities with fewer than K samples are drawn with replacement.
    """
    identities = np.array(sorted(index))
    if identities.size < cfg.p:
        raise DataError(f"PK sampling needs {cfg.p} identities, the dataset has {identities.size}")
    chosen = rng.choice(identities, size=cfg.p, replace=False)
    batch = []
    for identity in chosen:
        members = np.asarray(index[int(identity)])
        replace = members.size < cfg.k
        if replace:
            _LOGGER.debug(
                "Identity %d has %d samples, drawing %d with replacement",
                identity,
                members.size,
                cfg.k,
            )
        batch.append(rng.choice(members, size=cfg.k, replace=replace))
    return np.concatenate(batch)


class BatchPipeline:
    """Builds the training batch of any iteration independently of the others.

    Sampling and erasing draw from separate counter-based streams, so batch
    ``n`` is the same whichever order batches are prepared in.
    """

    def __init__(
        self,
        images: np.ndarray,
        labels: np.ndarray,
        index: Mapping[int, np.ndarray],
        sampler: PKSamplerConfig,
        erasing: REAConfig | None,
        seed: int,
    ) -> None:
        """Initialize the pipeline over normalized training images."""
        self.images = images
        self.labels = labels
        self.index = index
        self.sampler = sampler
        self.erasing = erasing
        self.seed = seed

    def indices(self, iteration: int) -> np.ndarray:
        """Return the sample indices of an iteration."""
        return sample_pk_batch(
            self.index, self.sampler, iteration_rng(self.seed, STREAM_SAMPLER, iteration)
        )

    def batch(self, iteration: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(images, labels)`` for an iteration."""
        chosen = self.indices(iteration)
        images = self.images[chosen]
        if self.erasing is not None:
            rng = iteration_rng(self.seed, STREAM_ERASING, iteration)
            images = np.stack([random_erase(image, self.erasing, rng) for image in images])
        return images, self.labels[chosen]

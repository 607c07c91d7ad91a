"""Random erasing augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .const import (
    CONF_REA_FILL,
    CONF_REA_P,
    CONF_REA_R1,
    CONF_REA_SH,
    CONF_REA_SL,
    DEFAULT_REA_P,
    DEFAULT_REA_R1,
    DEFAULT_REA_SH,
    DEFAULT_REA_SL,
    REA_FILL_MEAN,
    REA_FILL_RANDOM,
    REA_MAX_ATTEMPTS,
)
from .exceptions import ConfigError, ShapeError

_LOGGER = logging.getLogger(__name__)

Rectangle = tuple[int, int, int, int]


@dataclass(frozen=True)
class REAConfig:
    """Random erasing parameters.

    ``fill`` is ``mean`` (overwrite with ``fill_value`` per channel, the
    dataset mean, zero for normalized images) or ``random`` (standard
    normal noise).
    """

    p: float = DEFAULT_REA_P
    sl: float = DEFAULT_REA_SL
    sh: float = DEFAULT_REA_SH
    r1: float = DEFAULT_REA_R1
    fill: str = REA_FILL_MEAN
    fill_value: tuple[float, ...] = (0.0,)

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"probability must lie in [0, 1], got {self.p}", CONF_REA_P)
        if not 0.0 < self.sl <= self.sh < 1.0:
            raise ConfigError(
                f"area range must satisfy 0 < sl <= sh < 1, got [{self.sl}, {self.sh}]",
                CONF_REA_SL if self.sl <= 0 else CONF_REA_SH,
            )
        if not 0.0 < self.r1 <= 1.0:
            raise ConfigError(f"r1 must lie in (0, 1], got {self.r1}", CONF_REA_R1)
        if self.fill not in (REA_FILL_MEAN, REA_FILL_RANDOM):
            raise ConfigError(f"unknown fill policy {self.fill!r}", CONF_REA_FILL)


def sample_rectangle(
    height: int, width: int, cfg: REAConfig, rng: np.random.Generator
) -> Rectangle | None:
    """Draw ``(top, left, h, w)`` or None when no draw fits within the attempt bound."""
    area = height * width
    for _ in range(REA_MAX_ATTEMPTS):
        target = rng.uniform(cfg.sl, cfg.sh) * area
        aspect = rng.uniform(cfg.r1, 1.0 / cfg.r1)
        h = int(round(np.sqrt(target * aspect)))
        w = int(round(np.sqrt(target / aspect)))
        if not (1 <= h <= height and 1 <= w <= width):
            continue
        # rounding can leave the drawn ranges; such rectangles are redrawn
        if not cfg.sl <= h * w / area <= cfg.sh or not cfg.r1 <= h / w <= 1.0 / cfg.r1:
            continue
        top = int(rng.integers(0, height - h + 1))
        left = int(rng.integers(0, width - w + 1))
        return top, left, h, w
    return None


def random_erase(
    image: np.ndarray, cfg: REAConfig, rng: np.random.Generator
) -> np.ndarray:
    """Return a copy of a ``(C, H, W)`` image with at most one erased rectangle."""
    if image.ndim != 3 or min(image.shape) < 1:
        raise ShapeError("random_erase", image.shape, detail="expects a non-empty (C, H, W)")
    if rng.random() >= cfg.p:
        return image.copy()
    channels, height, width = image.shape
    rect = sample_rectangle(height, width, cfg, rng)
    if rect is None:
        _LOGGER.debug("No rectangle fits %dx%d after %d draws", height, width, REA_MAX_ATTEMPTS)
        return image.copy()
    top, left, h, w = rect
    out = image.copy()
    if cfg.fill == REA_FILL_RANDOM:
        out[:, top : top + h, left : left + w] = rng.standard_normal((channels, h, w))
    else:
        fill = np.broadcast_to(np.asarray(cfg.fill_value, dtype=np.float64), (channels,))
        out[:, top : top + h, left : left + w] = fill[:, None, None]
    return out

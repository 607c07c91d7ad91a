"""ID, triplet and center losses and their weighted sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .const import (
    CENTER_MODE_OPTIMIZER,
    CENTER_MODE_RULE,
    CONF_BETA,
    CONF_CENTER_LR,
    CONF_CENTER_MODE,
    CONF_EPSILON,
    CONF_MARGIN,
    DEFAULT_BETA,
    DEFAULT_CENTER_LR,
    DEFAULT_EPSILON,
    DEFAULT_MARGIN,
)
from .exceptions import ConfigError, LossError, ShapeError
from .tensor import Tensor

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelSmoothConfig:
    """Smoothing strength and class count of the ID loss."""

    num_classes: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}", CONF_EPSILON)
        if self.num_classes < 1:
            raise ConfigError(f"at least one class is required, got {self.num_classes}")


@dataclass(frozen=True)
class TripletConfig:
    """Margin of the batch-hard triplet loss."""

    margin: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        """Validate the margin."""
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}", CONF_MARGIN)


@dataclass(frozen=True)
class LossWeights:
    """Weight of the center loss in the total."""

    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        """Validate the weight."""
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}", CONF_BETA)


@dataclass(eq=False)
class CenterBank:
    """One learned center per training identity.

    In ``rule`` mode centers move with :func:`update_centers` after every
    step. In ``optimizer`` mode the centers tensor tracks gradients and is
    stepped by the main optimizer (never weight-decayed).
    """

    centers: Tensor
    learning_rate: float = DEFAULT_CENTER_LR
    mode: str = CENTER_MODE_RULE

    def __post_init__(self) -> None:
        """Validate the update mode."""
        if self.mode not in (CENTER_MODE_RULE, CENTER_MODE_OPTIMIZER):
            raise ConfigError(f"unknown center update mode {self.mode!r}", CONF_CENTER_MODE)
        if self.learning_rate < 0:
            raise ConfigError(
                f"center learning rate must be non-negative, got {self.learning_rate}",
                CONF_CENTER_LR,
            )

    @classmethod
    def create(
        cls,
        num_classes: int,
        feature_dim: int,
        learning_rate: float = DEFAULT_CENTER_LR,
        mode: str = CENTER_MODE_RULE,
    ) -> CenterBank:
        """Create a bank with every center at the origin."""
        centers = Tensor(
            np.zeros((num_classes, feature_dim)),
            requires_grad=mode == CENTER_MODE_OPTIMIZER,
            name="centers",
        )
        return cls(centers, learning_rate, mode)

    @property
    def num_classes(self) -> int:
        """Return the number of centers."""
        return self.centers.shape[0]

    @property
    def feature_dim(self) -> int:
        """Return the center dimensionality."""
        return self.centers.shape[1]


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of the loss components of one iteration."""

    l_id: float
    l_tri: float
    l_c: float
    total: float

    @property
    def finite(self) -> bool:
        """Return True if every component is finite."""
        return bool(np.isfinite([self.l_id, self.l_tri, self.l_c, self.total]).all())

    def as_dict(self) -> dict[str, float]:
        """Return the components keyed by their log column names."""
        return {"L_ID": self.l_id, "L_Tri": self.l_tri, "L_C": self.l_c, "total": self.total}


def smooth_targets(y: int, cfg: LabelSmoothConfig) -> np.ndarray:
    """Return the smoothed target distribution for class ``y``."""
    return smooth_target_matrix(np.array([y]), cfg)[0]


def smooth_target_matrix(labels: np.ndarray, cfg: LabelSmoothConfig) -> np.ndarray:
    """Return one smoothed target row per label."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.num_classes):
        raise LossError(f"labels must lie in [0, {cfg.num_classes}), got {labels.tolist()}")
    n = cfg.num_classes
    targets = np.full((labels.size, n), cfg.epsilon / n)
    targets[np.arange(labels.size), labels] = 1.0 - cfg.epsilon * (n - 1) / n
    return targets


def id_loss(logits: Tensor, labels: np.ndarray, cfg: LabelSmoothConfig) -> Tensor:
    """Return the batch-mean cross-entropy against smoothed targets."""
    if logits.ndim != 2 or logits.shape[1] != cfg.num_classes:
        raise ShapeError("id_loss", logits.shape, (-1, cfg.num_classes))
    if not np.isfinite(logits.data).all():
        raise LossError("id_loss: logits contain non-finite values")
    return T.cross_entropy(logits, smooth_target_matrix(labels, cfg))


def mine_hard_pairs(
    distances: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick the hardest positive and negative of every anchor that has a positive.

    Returns:
        anchor indices, hardest-positive indices, hardest-negative indices
    """
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(labels.size, dtype=bool)
    negative = ~same
    if not negative.any():
        raise LossError("batch_hard_triplet: the batch holds a single identity, no negatives")
    anchors = np.flatnonzero(positive.any(axis=1))
    if anchors.size == 0:
        raise LossError("batch_hard_triplet: no identity has two samples in the batch")
    hardest_pos = np.argmax(np.where(positive, distances, -np.inf), axis=1)
    hardest_neg = np.argmin(np.where(negative, distances, np.inf), axis=1)
    skipped = labels.size - anchors.size
    if skipped:
        _LOGGER.debug("Skipping %d anchors without a positive", skipped)
    return anchors, hardest_pos[anchors], hardest_neg[anchors]


def batch_hard_triplet(features: Tensor, labels: np.ndarray, cfg: TripletConfig) -> Tensor:
    """Return the mean over anchors of ``[d_p - d_n + margin]_+``.

    Distances are non-squared Euclidean; anchors without a positive are skipped.
    """
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ShapeError("batch_hard_triplet", features.shape, labels.shape)
    dist = T.pairwise_distance(features)
    anchors, pos, neg = mine_hard_pairs(dist.data, labels)
    d_p = T.gather(dist, anchors, pos)
    d_n = T.gather(dist, anchors, neg)
    return T.mean(T.relu(T.add(T.sub(d_p, d_n), cfg.margin)))


def _check_bank_labels(op: str, labels: np.ndarray, bank: CenterBank) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= bank.num_classes):
        raise LossError(f"{op}: labels outside the bank of {bank.num_classes} centers")


def center_loss(features: Tensor, labels: np.ndarray, bank: CenterBank) -> Tensor:
    """Return ``0.5 * sum_j ||f_j - c_{y_j}||^2`` over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape != (labels.size, bank.feature_dim):
        raise ShapeError("center_loss", features.shape, (labels.size, bank.feature_dim))
    _check_bank_labels("center_loss", labels, bank)
    diff = T.sub(features, T.take_rows(bank.centers, labels))
    return T.scale(T.sum(T.mul(diff, diff)), 0.5)


def update_centers(bank: CenterBank, features: np.ndarray, labels: np.ndarray) -> CenterBank:
    """Move every center referenced by the batch toward its members.

    ``c <- c - lr * sum(c - f) / (1 + count)``; unreferenced centers stay put.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape != (labels.size, bank.feature_dim):
        raise ShapeError("update_centers", features.shape, (labels.size, bank.feature_dim))
    _check_bank_labels("update_centers", labels, bank)
    centers = bank.centers.data
    for label in np.unique(labels):
        members = features[labels == label]
        delta = (centers[label] - members).sum(axis=0) / (1 + len(members))
        centers[label] -= bank.learning_rate * delta
    return bank


def total_loss(
    l_id: Tensor | float | None,
    l_tri: Tensor | float | None,
    l_c: Tensor | float | None,
    weights: LossWeights,
) -> tuple[Tensor, LossBreakdown]:
    """Combine ``L_ID + L_Tri + beta * L_C``; missing terms count as zero."""
    terms: list[Tensor] = []
    values = []
    for term, factor in ((l_id, 1.0), (l_tri, 1.0), (l_c, weights.beta)):
        if term is None:
            values.append(0.0)
            continue
        tensor = term if isinstance(term, Tensor) else Tensor(np.array(float(term)))
        values.append(tensor.item())
        if factor:
            terms.append(tensor if factor == 1.0 else T.scale(tensor, factor))
    total = terms[0] if terms else Tensor(np.array(0.0))
    for term in terms[1:]:
        total = T.add(total, term)
    return total, LossBreakdown(values[0], values[1], values[2], total.item())

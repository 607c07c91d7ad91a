"""Distances, single-query CMC/mAP and embedding-space statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .const import (
    DEFAULT_MAX_RANK,
    FEATURE_I,
    JUNK_LABEL,
    METRIC_COSINE,
    METRIC_EUCLIDEAN,
    METRICS,
    SPLIT_GALLERY,
    SPLIT_QUERY,
)
from .exceptions import EvaluationError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabeledEmbeddingSet:
    """Embeddings with identity labels and optional camera labels."""

    embeddings: np.ndarray
    labels: np.ndarray
    cameras: np.ndarray | None = None
    role: str = SPLIT_QUERY

    def __post_init__(self) -> None:
        """Validate that rows and labels agree."""
        if self.embeddings.ndim != 2:
            raise EvaluationError(f"embeddings must be (M, D), got {self.embeddings.shape}")
        if self.labels.shape != (len(self.embeddings),):
            raise EvaluationError(
                f"{len(self.embeddings)} embeddings but labels of shape {self.labels.shape}"
            )
        if self.cameras is not None and self.cameras.shape != self.labels.shape:
            raise EvaluationError(
                f"{len(self.embeddings)} embeddings but cameras of shape {self.cameras.shape}"
            )

    def __len__(self) -> int:
        """Return M."""
        return len(self.labels)

    @property
    def dim(self) -> int:
        """Return D."""
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class RerankParams:
    """k-reciprocal re-ranking parameters."""

    k1: int
    k2: int
    lam: float


@dataclass(frozen=True)
class ClusterStats:
    """Mean intra-class and inter-class distances and their ratio."""

    d_p: float
    d_n: float

    @property
    def ratio(self) -> float | None:
        """Return R = D_p / D_n, or None when every class pair coincides."""
        if self.d_n == 0:
            return None
        return self.d_p / self.d_n


@dataclass(frozen=True)
class NormStats:
    """Mean, population standard deviation and C.V. of feature norms."""

    mu: float
    sigma: float
    cv: float | None


@dataclass(frozen=True)
class EvalReport:
    """Retrieval accuracy of one (feature, metric, re-ranking) request."""

    cmc: np.ndarray
    mAP: float
    metric: str
    feature: str = FEATURE_I
    num_queries: int = 0
    num_valid: int = 0
    num_dropped: int = 0
    rerank: RerankParams | None = None
    cluster: ClusterStats | None = None
    norms: NormStats | None = None

    def rank(self, k: int) -> float:
        """Return the rank-k accuracy (1-based)."""
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def as_items(self) -> list[tuple[str, object]]:
        """Return the report as ``(key, value)`` pairs."""
        items: list[tuple[str, object]] = [
            ("feature", self.feature),
            ("metric", self.metric),
            ("rerank", self.rerank is not None),
            ("queries", self.num_queries),
            ("valid_queries", self.num_valid),
            ("dropped_queries", self.num_dropped),
            ("mAP", self.mAP),
        ]
        if self.rerank is not None:
            items += [("k1", self.rerank.k1), ("k2", self.rerank.k2), ("lambda", self.rerank.lam)]
        if self.cluster is not None:
            items += [("D_p", self.cluster.d_p), ("D_n", self.cluster.d_n)]
            items.append(("R", "" if self.cluster.ratio is None else self.cluster.ratio))
        if self.norms is not None:
            items += [("norm_mu", self.norms.mu), ("norm_sigma", self.norms.sigma)]
            items.append(("norm_cv", "" if self.norms.cv is None else self.norms.cv))
        items += [(f"rank{k}", float(value)) for k, value in enumerate(self.cmc, start=1)]
        return items


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise EvaluationError(f"unknown metric {metric!r}, expected one of {METRICS}")


def _check_norms(embeddings: np.ndarray, role: str) -> None:
    zero = np.flatnonzero(np.linalg.norm(embeddings, axis=1) == 0)
    if zero.size:
        raise EvaluationError(f"{role} row {int(zero[0])} has zero norm under cosine distance")


def distance_matrix(a: np.ndarray, b: np.ndarray, metric: str = METRIC_EUCLIDEAN) -> np.ndarray:
    """Return ``|A| x |B|`` non-squared Euclidean or cosine distances."""
    _check_metric(metric)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise EvaluationError(f"cannot compare embeddings of shapes {a.shape} and {b.shape}")
    if metric == METRIC_COSINE:
        _check_norms(a, "row")
        _check_norms(b, "column")
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    return cdist(a, b, metric=metric)


def evaluate(
    query: LabeledEmbeddingSet,
    gallery: LabeledEmbeddingSet,
    metric: str = METRIC_EUCLIDEAN,
    max_rank: int = DEFAULT_MAX_RANK,
    camera_filter: bool = True,
    distances: np.ndarray | None = None,
    feature: str = FEATURE_I,
    rerank: RerankParams | None = None,
) -> EvalReport:
    """Score single-query retrieval.

    Gallery entries sharing identity and camera with the query are ignored,
    as are junk entries. Ties rank by ascending gallery index. Queries left
    without a valid match are dropped and counted.
    """
    if distances is None:
        distances = distance_matrix(query.embeddings, gallery.embeddings, metric)
    else:
        _check_metric(metric)
    if distances.shape != (len(query), len(gallery)):
        raise EvaluationError(
            f"distance matrix {distances.shape} does not match {len(query)}x{len(gallery)}"
        )
    if len(gallery) == 0:
        raise EvaluationError("gallery is empty")
    use_cameras = camera_filter and query.cameras is not None and gallery.cameras is not None
    if camera_filter and not use_cameras:
        _LOGGER.info("Camera labels missing, evaluating without camera filtering")

    order = np.argsort(distances, axis=1, kind="stable")
    depth = min(max_rank, len(gallery))
    cmc = np.zeros(depth)
    precisions = []
    dropped = 0
    for q in range(len(query)):
        ranked = order[q]
        labels = gallery.labels[ranked]
        keep = labels != JUNK_LABEL
        if use_cameras:
            keep &= ~((labels == query.labels[q]) & (gallery.cameras[ranked] == query.cameras[q]))
        matches = labels[keep] == query.labels[q]
        if query.labels[q] == JUNK_LABEL or not matches.any():
            dropped += 1
            continue
        hits = np.flatnonzero(matches)
        if hits[0] < depth:
            cmc[hits[0] :] += 1
        precisions.append(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))

    valid = len(precisions)
    if valid == 0:
        raise EvaluationError("no query has a valid gallery match")
    if dropped:
        _LOGGER.warning("%d of %d queries have no valid gallery match", dropped, len(query))
    report = EvalReport(
        cmc=cmc / valid,
        mAP=float(np.mean(precisions)),
        metric=metric,
        feature=feature,
        num_queries=len(query),
        num_valid=valid,
        num_dropped=dropped,
        rerank=rerank,
    )
    _LOGGER.debug(
        "Evaluated %s/%s: rank-1 %.4f mAP %.4f", feature, metric, report.rank(1), report.mAP
    )
    return report


def cluster_ratio(
    embeddings: np.ndarray, labels: np.ndarray, metric: str = METRIC_EUCLIDEAN
) -> ClusterStats:
    """Return mean intra-class and inter-class pairwise distances."""
    _check_metric(metric)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if metric == METRIC_COSINE:
        _check_norms(embeddings, "row")
    rows, cols = np.triu_indices(len(labels), k=1)
    same = labels[rows] == labels[cols]
    if same.all():
        raise EvaluationError("cluster ratio needs at least two classes")
    if not same.any():
        raise EvaluationError("cluster ratio needs a class with at least two samples")
    distances = pdist(embeddings, metric=metric)
    return ClusterStats(float(distances[same].mean()), float(distances[~same].mean()))


def norm_stats(embeddings: np.ndarray) -> NormStats:
    """Return statistics of the per-sample L2 norms; C.V. is sigma / mu."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if len(embeddings) == 0:
        raise EvaluationError("norm statistics need at least one embedding")
    norms = np.linalg.norm(embeddings, axis=1)
    mu = float(norms.mean())
    sigma = float(norms.std())
    return NormStats(mu, sigma, sigma / mu if mu > 0 else None)


def embedding_set(
    embeddings: np.ndarray,
    labels: np.ndarray,
    cameras: np.ndarray | None = None,
    role: str = SPLIT_GALLERY,
) -> LabeledEmbeddingSet:
    """Build a set from arrays, copying them to float64/int64."""
    return LabeledEmbeddingSet(
        np.asarray(embeddings, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        None if cameras is None else np.asarray(cameras, dtype=np.int64),
        role,
    )

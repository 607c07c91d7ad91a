"""k-reciprocal re-ranking with local query expansion."""

from __future__ import annotations

import logging

import numpy as np

from .const import DEFAULT_K1, DEFAULT_K2, DEFAULT_LAMBDA, METRIC_EUCLIDEAN
from .evaluation import LabeledEmbeddingSet, distance_matrix
from .exceptions import EvaluationError

_LOGGER = logging.getLogger(__name__)


def _reciprocal_neighbors(initial_rank: np.ndarray, i: int, k: int) -> np.ndarray:
    forward = initial_rank[i, : k + 1]
    backward = initial_rank[forward, : k + 1]
    return forward[np.where(backward == i)[0]]


def _encode(original: np.ndarray, initial_rank: np.ndarray, k1: int) -> np.ndarray:
    """Return the Gaussian-weighted k-reciprocal encoding of every row."""
    total = original.shape[0]
    half = int(np.around(k1 / 2.0))
    encoding = np.zeros_like(original)
    for i in range(total):
        reciprocal = _reciprocal_neighbors(initial_rank, i, k1)
        expansion = reciprocal
        for candidate in reciprocal:
            candidate_reciprocal = _reciprocal_neighbors(initial_rank, candidate, half)
            overlap = np.intersect1d(candidate_reciprocal, reciprocal)
            if len(overlap) > 2.0 / 3 * len(candidate_reciprocal):
                expansion = np.append(expansion, candidate_reciprocal)
        expansion = np.unique(expansion)
        weight = np.exp(-original[i, expansion])
        encoding[i, expansion] = weight / np.sum(weight)
    return encoding


def _jaccard(encoding: np.ndarray, query_num: int) -> np.ndarray:
    total = encoding.shape[0]
    inverted = [np.where(encoding[:, column] != 0)[0] for column in range(total)]
    jaccard = np.zeros((query_num, total))
    for i in range(query_num):
        shared = np.zeros(total)
        nonzero = np.where(encoding[i, :] != 0)[0]
        for column in nonzero:
            rows = inverted[column]
            shared[rows] += np.minimum(encoding[i, column], encoding[rows, column])
        jaccard[i] = 1 - shared / (2.0 - shared)
    return jaccard


def rerank(
    q_g: np.ndarray,
    q_q: np.ndarray,
    g_g: np.ndarray,
    k1: int = DEFAULT_K1,
    k2: int = DEFAULT_K2,
    lam: float = DEFAULT_LAMBDA,
) -> np.ndarray:
    """Blend Jaccard distance over k-reciprocal sets with the original distance.

    Distances are scaled by their column maximum over the pooled
    query+gallery set before encoding. Returns ``(1 - lam) * d_J + lam * d``
    for the query/gallery block.
    """
    query_num, gallery_num = q_g.shape
    if q_q.shape != (query_num, query_num) or g_g.shape != (gallery_num, gallery_num):
        raise EvaluationError(
            f"distance blocks {q_g.shape}, {q_q.shape}, {g_g.shape} do not fit together"
        )
    if not k1 > k2 >= 1:
        raise EvaluationError(f"re-ranking needs k1 > k2 >= 1, got k1={k1} k2={k2}")
    if k1 >= gallery_num:
        raise EvaluationError(f"k1={k1} must be smaller than the gallery size {gallery_num}")
    if not 0.0 <= lam <= 1.0:
        raise EvaluationError(f"lambda must lie in [0, 1], got {lam}")

    original = np.concatenate(
        [np.concatenate([q_q, q_g], axis=1), np.concatenate([q_g.T, g_g], axis=1)], axis=0
    ).astype(np.float64)
    column_max = np.max(original, axis=0)
    original = np.transpose(original / np.where(column_max > 0, column_max, 1.0))
    initial_rank = np.argsort(original, axis=1, kind="stable")

    encoding = _encode(original, initial_rank, k1)
    if k2 != 1:
        encoding = np.stack(
            [encoding[initial_rank[i, :k2], :].mean(axis=0) for i in range(len(encoding))]
        )
    jaccard = _jaccard(encoding, query_num)
    final = jaccard * (1 - lam) + original[:query_num] * lam
    _LOGGER.debug(
        "Re-ranked %dx%d distances (k1=%d k2=%d lambda=%.2f)", query_num, gallery_num, k1, k2, lam
    )
    return final[:, query_num:]


def rerank_embeddings(
    query: LabeledEmbeddingSet,
    gallery: LabeledEmbeddingSet,
    metric: str = METRIC_EUCLIDEAN,
    k1: int = DEFAULT_K1,
    k2: int = DEFAULT_K2,
    lam: float = DEFAULT_LAMBDA,
) -> np.ndarray:
    """Compute the three distance blocks and re-rank them."""
    q, g = query.embeddings, gallery.embeddings
    return rerank(
        distance_matrix(q, g, metric),
        distance_matrix(q, q, metric),
        distance_matrix(g, g, metric),
        k1,
        k2,
        lam,
    )

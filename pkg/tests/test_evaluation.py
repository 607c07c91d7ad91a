"""Test distances, retrieval scoring and embedding statistics."""

import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from necklab.const import METRIC_COSINE, METRIC_EUCLIDEAN
from necklab.evaluation import (
    cluster_ratio,
    distance_matrix,
    embedding_set,
    evaluate,
    norm_stats,
)
from necklab.exceptions import EvaluationError


def _line(positions: list[float], labels: list[int], cameras: list[int] | None = None):
    """Return a gallery of 1-D points."""
    return embedding_set(np.array(positions, dtype=float)[:, None], labels, cameras)


def _query(label: int = 1, camera: int | None = None):
    return embedding_set([[0.0]], [label], None if camera is None else [camera], role="query")


@pytest.mark.parametrize("metric", [METRIC_EUCLIDEAN, METRIC_COSINE])
def test_identical_vectors_have_zero_distance(metric: str) -> None:
    """Test d(x, x) = 0 under both metrics."""
    x = np.array([[0.3, -1.2, 2.0]])

    assert distance_matrix(x, x, metric)[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_orthogonal_unit_vectors() -> None:
    """Test (1,0) vs (0,1) is sqrt(2) Euclidean and 1 cosine."""
    a, b = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])

    assert distance_matrix(a, b)[0, 0] == pytest.approx(np.sqrt(2))
    assert distance_matrix(a, b, METRIC_COSINE)[0, 0] == pytest.approx(1.0)


def test_cosine_is_scale_invariant(rng: np.random.Generator) -> None:
    """Test positive per-row scaling leaves cosine distances unchanged."""
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    scale = rng.uniform(0.1, 10.0, size=(4, 1))

    np.testing.assert_allclose(
        distance_matrix(a * scale, b, METRIC_COSINE), distance_matrix(a, b, METRIC_COSINE)
    )


def test_distance_matrix_errors() -> None:
    """Test zero norms under cosine, dimension mismatch and unknown metrics."""
    with pytest.raises(EvaluationError, match="row 1"):
        distance_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones((1, 2)), METRIC_COSINE)
    with pytest.raises(EvaluationError):
        distance_matrix(np.ones((1, 2)), np.ones((1, 3)))
    with pytest.raises(EvaluationError):
        distance_matrix(np.ones((1, 2)), np.ones((1, 2)), "manhattan")


def test_average_precision_example() -> None:
    """Test relevance (1, 0, 1) gives AP = (1/1 + 2/3) / 2."""
    report = evaluate(_query(), _line([1.0, 2.0, 3.0], [1, 2, 1]), camera_filter=False)

    assert report.mAP == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)
    assert report.rank(1) == 1.0


def test_cmc_two_queries() -> None:
    """Test one hit at rank 1 and one at rank 2 give CMC (0.5, 1.0)."""
    query = embedding_set([[0.0], [10.0]], [1, 2], role="query")
    gallery = _line([0.5, 9.6, 10.5], [1, 1, 2])

    report = evaluate(query, gallery)

    np.testing.assert_allclose(report.cmc[:2], [0.5, 1.0])


def test_camera_filter_excludes_same_camera_matches() -> None:
    """Test only the cross-camera match of the query identity counts."""
    gallery = _line([1.0, 3.0, 2.0], [1, 1, 2], [1, 2, 1])

    filtered = evaluate(_query(1, camera=1), gallery)
    unfiltered = evaluate(_query(1, camera=1), gallery, camera_filter=False)

    # Valid list is (2,1) then (1,2): first match at rank 2
    assert filtered.rank(1) == 0.0
    assert filtered.rank(2) == 1.0
    assert filtered.mAP == pytest.approx(0.5)
    assert unfiltered.rank(1) == 1.0


def test_junk_and_dropped_queries() -> None:
    """Test junk entries are ignored and queries without a match are dropped."""
    query = embedding_set([[0.0], [5.0], [9.0]], [1, 3, -1], role="query")
    gallery = _line([0.1, 0.2, 5.1], [-1, 1, 2])

    report = evaluate(query, gallery)

    assert (report.num_queries, report.num_valid, report.num_dropped) == (3, 1, 2)
    assert report.rank(1) == 1.0
    assert report.mAP == 1.0


def test_no_valid_query_is_an_error() -> None:
    """Test evaluation fails when no query has a match."""
    with pytest.raises(EvaluationError):
        evaluate(_query(7), _line([1.0], [1]))


def test_cmc_depth_is_capped_by_gallery() -> None:
    """Test the CMC curve never runs past the gallery size."""
    report = evaluate(_query(), _line([1.0, 2.0], [2, 1]), max_rank=50)

    np.testing.assert_array_equal(report.cmc, [0.0, 1.0])
    assert report.rank(50) == 1.0


def _oracle(distances, q_labels, q_cams, g_labels, g_cams, max_rank):
    """Straightforward per-query scoring over explicitly sorted candidate lists."""
    depth = min(max_rank, len(g_labels))
    hits_at = []
    average_precisions = []
    for q in range(len(q_labels)):
        ranking = sorted(range(len(g_labels)), key=lambda j: (distances[q][j], j))
        valid = [
            j
            for j in ranking
            if g_labels[j] != -1 and not (g_labels[j] == q_labels[q] and g_cams[j] == q_cams[q])
        ]
        relevant = [g_labels[j] == q_labels[q] for j in valid]
        if q_labels[q] == -1 or not any(relevant):
            continue
        found = 0
        precisions = []
        for position, is_match in enumerate(relevant, start=1):
            if is_match:
                found += 1
                precisions.append(found / position)
        hits_at.append(relevant.index(True))
        average_precisions.append(sum(precisions) / len(precisions))
    if not hits_at:
        return None
    cmc = [sum(hit <= k for hit in hits_at) / len(hits_at) for k in range(depth)]
    return cmc, sum(average_precisions) / len(average_precisions)


@pytest.mark.parametrize("seed", range(200))
def test_evaluate_matches_oracle(seed: int) -> None:
    """Test CMC and mAP against the straightforward oracle, ties included."""
    rng = np.random.default_rng(seed)
    nq, ng = int(rng.integers(1, 21)), int(rng.integers(1, 51))
    q_labels = rng.integers(-1, 5, size=nq)
    g_labels = rng.integers(-1, 5, size=ng)
    q_cams = rng.integers(1, 4, size=nq)
    g_cams = rng.integers(1, 4, size=ng)
    # Small integer distances force ties
    distances = rng.integers(0, 6, size=(nq, ng)).astype(float)
    query = embedding_set(np.zeros((nq, 1)), q_labels, q_cams, role="query")
    gallery = embedding_set(np.zeros((ng, 1)), g_labels, g_cams)

    expected = _oracle(distances, q_labels, q_cams, g_labels, g_cams, 20)

    if expected is None:
        with pytest.raises(EvaluationError):
            evaluate(query, gallery, max_rank=20, distances=distances)
        return
    report = evaluate(query, gallery, max_rank=20, distances=distances)
    np.testing.assert_allclose(report.cmc, expected[0], rtol=0, atol=1e-12)
    assert report.mAP == pytest.approx(expected[1], abs=1e-12)
    assert (np.diff(report.cmc) >= 0).all()
    assert 0.0 <= report.mAP <= 1.0


def test_gallery_permutation_invariance(rng: np.random.Generator) -> None:
    """Test reordering the gallery leaves the report unchanged."""
    query = embedding_set(rng.standard_normal((6, 4)), rng.integers(0, 3, 6), role="query")
    g_emb, g_labels = rng.standard_normal((15, 4)), np.tile([0, 1, 2], 5)
    perm = rng.permutation(15)

    base = evaluate(query, embedding_set(g_emb, g_labels))
    shuffled = evaluate(query, embedding_set(g_emb[perm], g_labels[perm]))

    np.testing.assert_allclose(base.cmc, shuffled.cmc)
    assert base.mAP == pytest.approx(shuffled.mAP)


def test_report_items() -> None:
    """Test report items carry the ranks in order."""
    report = evaluate(_query(), _line([1.0, 2.0], [2, 1]))

    items = dict(report.as_items())
    assert items["rank1"] == 0.0
    assert items["rank2"] == 1.0
    assert items["rerank"] is False


def test_cluster_ratio_example() -> None:
    """Test A={0,2}, B={10,12} gives D_p=2, D_n=10 and R=0.2."""
    stats = cluster_ratio(np.array([[0.0], [2.0], [10.0], [12.0]]), np.array([0, 0, 1, 1]))

    assert (stats.d_p, stats.d_n) == (pytest.approx(2.0), pytest.approx(10.0))
    assert stats.ratio == pytest.approx(0.2)


def test_cluster_ratio_zero_for_duplicates() -> None:
    """Test coincident class members give R = 0."""
    points = np.array([[1.0, 1.0], [1.0, 1.0], [4.0, 5.0], [4.0, 5.0]])

    assert cluster_ratio(points, np.array([3, 3, 8, 8])).ratio == 0.0


def test_cluster_ratio_matches_enumeration(rng: np.random.Generator) -> None:
    """Test D_p and D_n against enumeration of every pair, and isometry invariance."""
    points = rng.standard_normal((40, 3))
    labels = rng.integers(0, 4, size=40)
    same, cross = [], []
    for i, j in itertools.combinations(range(40), 2):
        distance = float(np.linalg.norm(points[i] - points[j]))
        (same if labels[i] == labels[j] else cross).append(distance)

    stats = cluster_ratio(points, labels)

    assert stats.d_p == pytest.approx(np.mean(same))
    assert stats.d_n == pytest.approx(np.mean(cross))
    rotation, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = cluster_ratio(points @ rotation + 5.0, labels)
    assert moved.ratio == pytest.approx(stats.ratio)


def test_cluster_ratio_undefined_for_collapsed_embeddings() -> None:
    """Test embeddings on a single point leave R undefined and the report cell empty."""
    stats = cluster_ratio(np.zeros((4, 2)), np.array([0, 0, 1, 1]))

    assert (stats.d_p, stats.d_n) == (0.0, 0.0)
    assert stats.ratio is None
    report = replace(evaluate(_query(), _line([1.0, 2.0], [2, 1])), cluster=stats)
    items = dict(report.as_items())
    assert items["R"] == ""


def test_cluster_ratio_errors() -> None:
    """Test a single class or only singleton classes are refused."""
    with pytest.raises(EvaluationError):
        cluster_ratio(np.zeros((3, 2)), np.array([1, 1, 1]))
    with pytest.raises(EvaluationError):
        cluster_ratio(np.eye(3), np.array([0, 1, 2]))


def test_norm_stats_example() -> None:
    """Test norms {3, 4} give mu 3.5, population sigma 0.5 and C.V. sigma / mu."""
    stats = norm_stats(np.array([[3.0, 0.0], [0.0, 4.0]]))

    assert (stats.mu, stats.sigma) == (pytest.approx(3.5), pytest.approx(0.5))
    assert stats.cv == pytest.approx(0.5 / 3.5)


def test_norm_stats_edge_cases() -> None:
    """Test constant norms, zero embeddings and empty sets."""
    assert norm_stats(np.array([[1.0, 0.0], [0.0, 1.0]])).cv == 0.0
    assert norm_stats(np.zeros((2, 3))).cv is None
    with pytest.raises(EvaluationError):
        norm_stats(np.zeros((0, 3)))


@given(
    embeddings=arrays(
        np.float64, (5, 3), elements=st.floats(min_value=-10, max_value=10, allow_nan=False)
    ),
    factor=st.floats(min_value=0.01, max_value=100),
)
def test_norm_cv_is_scale_invariant(embeddings: np.ndarray, factor: float) -> None:
    """Test scaling embeddings by c > 0 scales mu and sigma and keeps C.V."""
    base = norm_stats(embeddings)
    scaled = norm_stats(embeddings * factor)

    assert scaled.mu == pytest.approx(base.mu * factor, rel=1e-9, abs=1e-12)
    if base.cv is None or base.mu < 1e-6:
        return
    assert scaled.cv == pytest.approx(base.cv, rel=1e-6, abs=1e-9)

"""Test the ID, triplet and center losses."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from necklab import tensor as T
from necklab.const import CENTER_MODE_OPTIMIZER, GRADCHECK_TOLERANCE
from necklab.exceptions import ConfigError, LossError, ShapeError
from necklab.losses import (
    CenterBank,
    LabelSmoothConfig,
    LossWeights,
    TripletConfig,
    batch_hard_triplet,
    center_loss,
    id_loss,
    mine_hard_pairs,
    smooth_target_matrix,
    smooth_targets,
    total_loss,
    update_centers,
)
from necklab.tensor import Tensor


def test_smooth_targets_ten_classes() -> None:
    """Test N=10, epsilon=0.1 gives 0.91 on the true class and 0.01 elsewhere."""
    targets = smooth_targets(3, LabelSmoothConfig(10, 0.1))

    assert targets[3] == pytest.approx(0.91)
    np.testing.assert_allclose(np.delete(targets, 3), np.full(9, 0.01))
    assert abs(targets.sum() - 1.0) < 1e-12


def test_smooth_targets_without_smoothing_is_one_hot() -> None:
    """Test epsilon 0 reduces to one-hot targets."""
    np.testing.assert_array_equal(
        smooth_target_matrix(np.array([0, 2]), LabelSmoothConfig(3, 0.0)),
        [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
    )


@given(
    n=st.integers(min_value=2, max_value=50),
    epsilon=st.floats(min_value=0.0, max_value=0.99),
    data=st.data(),
)
def test_smooth_targets_are_distributions(n: int, epsilon: float, data: st.DataObject) -> None:
    """Test every smoothed target is a probability vector peaked at the label."""
    label = data.draw(st.integers(min_value=0, max_value=n - 1))

    targets = smooth_targets(label, LabelSmoothConfig(n, epsilon))

    assert (targets >= 0).all()
    assert targets.sum() == pytest.approx(1.0, abs=1e-12)
    assert targets.argmax() == label


def test_label_smooth_config_validation() -> None:
    """Test epsilon outside [0, 1) is rejected."""
    with pytest.raises(ConfigError):
        LabelSmoothConfig(10, 1.0)

    with pytest.raises(LossError):
        smooth_target_matrix(np.array([10]), LabelSmoothConfig(10, 0.1))


def test_id_loss_value() -> None:
    """Test the ID loss equals the cross-entropy against smoothed targets."""
    logits = Tensor([[2.0, 1.0, 0.0]])
    cfg = LabelSmoothConfig(3, 0.1)

    loss = id_loss(logits, np.array([0]), cfg).item()

    log_probs = logits.data[0] - np.log(np.exp(logits.data[0]).sum())
    assert loss == pytest.approx(-(smooth_targets(0, cfg) * log_probs).sum())


@pytest.mark.parametrize(("classes", "epsilon"), [(4, 0.0), (10, 0.1)])
def test_id_loss_uniform_logits(classes: int, epsilon: float) -> None:
    """Test uniform scores give ln N whatever the smoothing."""
    logits = Tensor(np.zeros((3, classes)))

    loss = id_loss(logits, np.array([0, 1, 2]), LabelSmoothConfig(classes, epsilon)).item()

    assert loss == pytest.approx(np.log(classes))


def test_id_loss_confident_correct_prediction() -> None:
    """Test a large margin on the true class drives the loss to zero."""
    logits = Tensor(50.0 * np.eye(4)[[1, 3]])

    loss = id_loss(logits, np.array([1, 3]), LabelSmoothConfig(4, 0.0)).item()

    assert loss == pytest.approx(0.0, abs=1e-12)


def test_id_loss_rejects_non_finite_logits() -> None:
    """Test non-finite scores raise a loss error."""
    with pytest.raises(LossError):
        id_loss(Tensor([[np.nan, 0.0]]), np.array([0]), LabelSmoothConfig(2))

    with pytest.raises(ShapeError):
        id_loss(Tensor([[0.0, 0.0]]), np.array([0]), LabelSmoothConfig(3))


@pytest.mark.parametrize(
    ("features", "expected"),
    [
        # d_p = 0.3, d_n = 0.5
        ([0.0, 0.3, -0.5, 0.8], 0.1),
        # d_p = 1.3, d_n = 1.5
        ([0.0, 1.3, -1.5, 2.8], 0.1),
    ],
)
def test_triplet_loss_worked_examples(features: list[float], expected: float) -> None:
    """Test both anchors of identity A give [d_p - d_n + 0.3]_+ = 0.1."""
    x = Tensor(np.array(features)[:, None])
    labels = np.array([0, 0, 1, 2])

    loss = batch_hard_triplet(x, labels, TripletConfig(0.3)).item()

    assert loss == pytest.approx(expected)


def test_triplet_loss_is_zero_when_margin_met() -> None:
    """Test well-separated identities give zero loss."""
    x = Tensor([[0.0], [0.1], [5.0], [5.1]])

    assert batch_hard_triplet(x, np.array([0, 0, 1, 1]), TripletConfig(0.3)).item() == 0.0


def test_triplet_loss_needs_negatives_and_positives() -> None:
    """Test batches with a single identity or only singletons are refused."""
    cfg = TripletConfig()

    with pytest.raises(LossError):
        batch_hard_triplet(Tensor(np.zeros((3, 2))), np.array([1, 1, 1]), cfg)

    with pytest.raises(LossError):
        batch_hard_triplet(Tensor(np.eye(3)), np.array([0, 1, 2]), cfg)


def test_triplet_loss_one_dimensional_example() -> None:
    """Test A:{0, 1}, B:{2, 5} gives hinge values {0, 0.3, 2.3, 0} and mean 0.65."""
    x = Tensor([[0.0], [1.0], [2.0], [5.0]])

    loss = batch_hard_triplet(x, np.array([0, 0, 1, 1]), TripletConfig(0.3)).item()

    assert loss == pytest.approx(0.65)


def _exhaustive_triplet(x: np.ndarray, labels: np.ndarray, margin: float) -> float:
    """Return the batch-hard loss by enumerating every triplet."""
    dist = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    values = []
    for a in range(len(x)):
        positives = [p for p in range(len(x)) if p != a and labels[p] == labels[a]]
        negatives = [n for n in range(len(x)) if labels[n] != labels[a]]
        if not positives:
            continue
        hardest = max(
            (dist[a, p] - dist[a, n] + margin for p, n in itertools.product(positives, negatives)),
        )
        values.append(max(hardest, 0.0))
    return float(np.mean(values))


@pytest.mark.parametrize("seed", range(40))
def test_batch_hard_matches_exhaustive_mining(seed: int) -> None:
    """Test hardest-pair mining against enumeration of every triplet."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(3, 13))
    labels = rng.integers(0, max(2, size // 2), size=size)
    labels[:2] = [0, 0]
    labels[2] = 1 if labels[2] == 0 else labels[2]
    x = rng.standard_normal((size, 3))

    loss = batch_hard_triplet(Tensor(x), labels, TripletConfig(0.3)).item()

    assert loss == pytest.approx(_exhaustive_triplet(x, labels, 0.3), abs=1e-12)


def test_mine_hard_pairs_skips_anchors_without_positive() -> None:
    """Test singleton identities serve as negatives but not as anchors."""
    dist = np.array(
        [
            [0.0, 1.0, 2.0],
            [1.0, 0.0, 3.0],
            [2.0, 3.0, 0.0],
        ]
    )

    anchors, pos, neg = mine_hard_pairs(dist, np.array([0, 0, 1]))

    np.testing.assert_array_equal(anchors, [0, 1])
    np.testing.assert_array_equal(pos, [1, 0])
    np.testing.assert_array_equal(neg, [2, 2])


def test_center_loss_value() -> None:
    """Test L_C = 0.5 * sum of squared distances to the class centers."""
    bank = CenterBank(Tensor([[0.0, 0.0], [1.0, 1.0]]))
    features = Tensor([[1.0, 0.0], [1.0, 3.0]])

    loss = center_loss(features, np.array([0, 1]), bank).item()

    assert loss == pytest.approx(0.5 * (1.0 + 4.0))


def test_center_loss_rejects_unknown_labels() -> None:
    """Test labels beyond the bank are refused."""
    bank = CenterBank.create(2, 3)

    with pytest.raises(LossError):
        center_loss(Tensor(np.zeros((1, 3))), np.array([2]), bank)


def test_update_centers_rule() -> None:
    """Test c <- c - lr * sum(c - f) / (1 + n) for referenced centers only."""
    bank = CenterBank(Tensor([[0.0, 0.0], [4.0, 4.0]]), learning_rate=0.5)
    features = np.array([[2.0, 0.0], [4.0, 0.0]])

    update_centers(bank, features, np.array([0, 0]))

    # delta = ((0-2) + (0-4)) / 3 = -2 on the first axis
    np.testing.assert_allclose(bank.centers.data, [[1.0, 0.0], [4.0, 4.0]])


def test_update_centers_single_member_full_rate() -> None:
    """Test alpha 1 with one member moves the center half way: c - (c - f) / 2."""
    bank = CenterBank(Tensor([[0.0, 0.0], [4.0, 4.0]]), learning_rate=1.0)

    update_centers(bank, np.array([[2.0, -2.0]]), np.array([0]))

    np.testing.assert_allclose(bank.centers.data, [[1.0, -1.0], [4.0, 4.0]])


def test_update_centers_converges_to_batch_mean() -> None:
    """Test repeated updates on a fixed batch settle on the class mean."""
    bank = CenterBank(Tensor([[10.0, -3.0]]), learning_rate=0.5)
    features = np.array([[2.0, 0.0], [4.0, 1.0], [6.0, 2.0]])

    for _ in range(200):
        update_centers(bank, features, np.array([0, 0, 0]))

    np.testing.assert_allclose(bank.centers.data[0], features.mean(axis=0), atol=1e-9)


def test_update_centers_rejects_labels_outside_bank() -> None:
    """Test a negative label is refused instead of moving the last center."""
    bank = CenterBank(Tensor([[0.0], [1.0]]))

    with pytest.raises(LossError):
        update_centers(bank, np.array([[3.0]]), np.array([-1]))
    with pytest.raises(LossError):
        update_centers(bank, np.array([[3.0]]), np.array([2]))
    np.testing.assert_array_equal(bank.centers.data, [[0.0], [1.0]])


def test_center_bank_modes() -> None:
    """Test only optimizer-mode centers track gradients."""
    assert not CenterBank.create(3, 2).centers.requires_grad
    assert CenterBank.create(3, 2, mode=CENTER_MODE_OPTIMIZER).centers.requires_grad

    with pytest.raises(ConfigError):
        CenterBank.create(3, 2, mode="momentum")


def test_total_loss_combination() -> None:
    """Test L = L_ID + L_Tri + beta * L_C with missing terms as zero."""
    total, breakdown = total_loss(1.0, 2.0, 100.0, LossWeights(0.0005))

    assert total.item() == pytest.approx(3.05)
    assert breakdown.as_dict() == pytest.approx(
        {"L_ID": 1.0, "L_Tri": 2.0, "L_C": 100.0, "total": 3.05}
    )

    total, breakdown = total_loss(None, 0.5, None, LossWeights())
    assert total.item() == 0.5
    assert (breakdown.l_id, breakdown.l_c) == (0.0, 0.0)


def test_total_loss_zero_beta_ignores_center_term() -> None:
    """Test beta 0 leaves the center term out of the objective."""
    l_c = Tensor(np.array(5.0), requires_grad=True)
    l_id = Tensor(np.array(1.0), requires_grad=True)

    total, _ = total_loss(l_id, None, l_c, LossWeights(0.0))
    total.backward()

    assert total.item() == 1.0
    assert l_c.grad is None


def test_loss_breakdown_finite() -> None:
    """Test the finiteness flag."""
    _, good = total_loss(1.0, 1.0, 1.0, LossWeights())
    _, bad = total_loss(float("inf"), 1.0, 1.0, LossWeights())

    assert good.finite
    assert not bad.finite


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients(seed: int) -> None:
    """Test every loss against finite differences."""
    rng = np.random.default_rng(seed)
    labels = np.array([0, 0, 1, 1, 2, 2])
    smoothing = LabelSmoothConfig(3, 0.1)
    centers = rng.standard_normal((3, 4))

    def center(features: Tensor) -> Tensor:
        return center_loss(features, labels, CenterBank(Tensor(centers)))

    def center_wrt_bank(bank_centers: Tensor) -> Tensor:
        return center_loss(Tensor(rng_features), labels, CenterBank(bank_centers))

    rng_features = rng.standard_normal((6, 4))
    checks = [
        (lambda z: id_loss(z, labels, smoothing), [(6, 3)]),
        (lambda f: batch_hard_triplet(f, labels, TripletConfig(0.3)), [(6, 4)]),
        (center, [(6, 4)]),
        (center_wrt_bank, [(3, 4)]),
        (lambda f: T.scale(center(f), 0.0005), [(6, 4)]),
    ]
    for op, shapes in checks:
        assert T.gradient_check(op, shapes, seed) < GRADCHECK_TOLERANCE

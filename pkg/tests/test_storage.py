"""Test checkpoints, embedding files and delimited-text exports."""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from necklab.data import IdentityDataset
from necklab.exceptions import DataError, EvaluationError
from necklab.model import NeckVariant
from necklab.storage import (
    export_embedding_scatter,
    load_checkpoint,
    read_embeddings,
    read_embeddings_text,
    read_table,
    read_training_log,
    save_checkpoint,
    write_embeddings,
    write_embeddings_text,
    write_table,
    write_training_log,
)
from necklab.training import TrainConfig, train


def test_checkpoint_round_trip(
    tmp_path: Path, blobs: IdentityDataset, tiny_train_config: TrainConfig
) -> None:
    """Test a loaded checkpoint reproduces features, normalization and centers."""
    cfg = replace(tiny_train_config, neck=NeckVariant.BNNECK, center_loss=True)
    result = train(blobs, cfg)
    path = tmp_path / "checkpoint.npz"

    save_checkpoint(path, result, manifest_hash="abc123def456", options={"seed": 7})
    checkpoint = load_checkpoint(path)

    images = checkpoint.normalize(blobs.images)
    expected = (blobs.images - result.norm_mean[None, :, None, None]) / result.norm_std[
        None, :, None, None
    ]
    np.testing.assert_array_equal(images, expected)
    np.testing.assert_array_equal(checkpoint.model.extract(images), result.model.extract(images))
    np.testing.assert_array_equal(checkpoint.label_map, result.label_map)
    np.testing.assert_array_equal(checkpoint.centers.centers.data, result.centers.centers.data)
    assert checkpoint.manifest_hash == "abc123def456"
    assert checkpoint.options == {"seed": 7}
    assert checkpoint.model.variant is NeckVariant.BNNECK


def test_load_checkpoint_errors(tmp_path: Path) -> None:
    """Test missing and foreign files are data errors."""
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.npz")

    foreign = tmp_path / "foreign.npz"
    np.savez(foreign, weights=np.zeros(3))
    with pytest.raises(DataError):
        load_checkpoint(foreign)


def test_embeddings_binary_round_trip(tmp_path: Path, rng: np.random.Generator) -> None:
    """Test values, identities and cameras survive the binary format exactly."""
    embeddings = rng.standard_normal((4, 3))
    labels, cameras = np.array([0, 5, -1, 2]), np.array([1, 1, 2, 3])

    write_embeddings(tmp_path / "e.bin", embeddings, labels, cameras)
    values, ids, cams = read_embeddings(tmp_path / "e.bin")

    np.testing.assert_array_equal(values, embeddings)
    np.testing.assert_array_equal(ids, labels)
    np.testing.assert_array_equal(cams, cameras)

    write_embeddings(tmp_path / "plain.bin", embeddings)
    assert read_embeddings(tmp_path / "plain.bin")[1:] == (None, None)


def test_embeddings_binary_errors(tmp_path: Path, rng: np.random.Generator) -> None:
    """Test bad magic, truncation and mismatched columns."""
    path = tmp_path / "e.bin"
    path.write_bytes(b"NOPE")
    with pytest.raises(DataError):
        read_embeddings(path)

    write_embeddings(path, rng.standard_normal((2, 2)), np.array([1, 2]))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DataError):
        read_embeddings(path)

    with pytest.raises(DataError):
        write_embeddings(path, np.zeros((2, 2)), np.array([1, 2, 3]))


def test_embeddings_text_round_trip(tmp_path: Path) -> None:
    """Test the text format keeps full precision."""
    embeddings = np.array([[0.1, 1 / 3], [-2.5e-17, 123456.789]])

    write_embeddings_text(tmp_path / "e.csv", embeddings, np.array([3, 4]))
    values, ids, cams = read_embeddings_text(tmp_path / "e.csv")

    np.testing.assert_array_equal(values, embeddings)
    np.testing.assert_array_equal(ids, [3, 4])
    assert cams is None


def test_embeddings_text_errors(tmp_path: Path) -> None:
    """Test foreign headers and row-count mismatches."""
    path = tmp_path / "e.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(DataError):
        read_embeddings_text(path)

    path.write_text("NLEMB-TEXT,1,2,1,0\n0.5\n")
    with pytest.raises(DataError, match="announces 2 rows"):
        read_embeddings_text(path)


def test_table_manifest_comment(tmp_path: Path) -> None:
    """Test tables can open with the manifest hash and read back without it."""
    path = tmp_path / "table.csv"

    write_table(path, ("beta", "mAP"), [(0.0005, 0.1), (0.5, 2 / 3)], manifest_hash="0123abcd4567")

    assert path.read_text().splitlines()[0] == "# manifest 0123abcd4567"
    header, rows = read_table(path)
    assert header == ["beta", "mAP"]
    assert float(rows[1][1]) == 2 / 3


def test_read_table_needs_header(tmp_path: Path) -> None:
    """Test a comment-only file is refused."""
    path = tmp_path / "empty.csv"
    path.write_text("# manifest 0\n")

    with pytest.raises(DataError):
        read_table(path)


def test_training_log_round_trip(
    tmp_path: Path, blobs: IdentityDataset, tiny_train_config: TrainConfig
) -> None:
    """Test every logged value reads back exactly."""
    log = train(blobs, tiny_train_config).log
    path = tmp_path / "training_log.csv"

    write_training_log(path, log, manifest_hash="feedfacecafe")

    assert [r.as_row() for r in read_training_log(path)] == [r.as_row() for r in log]


def test_scatter_export(tmp_path: Path) -> None:
    """Test one row per sample plus header, and header only for empty sets."""
    path = tmp_path / "scatter.csv"

    export_embedding_scatter(np.array([[0.1, 0.2], [1.0, -1.0], [3.0, 4.0]]), [0, 1, 1], path)
    header, rows = read_table(path)

    assert header == ["x", "y", "label"]
    assert rows == [["0.1", "0.2", "0"], ["1.0", "-1.0", "1"], ["3.0", "4.0", "1"]]

    export_embedding_scatter(np.zeros((0, 2)), [], path)
    assert read_table(path) == (["x", "y", "label"], [])


def test_scatter_export_needs_two_dimensions(tmp_path: Path) -> None:
    """Test other dimensionalities are refused."""
    with pytest.raises(EvaluationError):
        export_embedding_scatter(np.zeros((3, 3)), [0, 1, 2], tmp_path / "scatter.csv")

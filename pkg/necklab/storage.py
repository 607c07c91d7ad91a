"""On-disk formats: checkpoints, embedding files and delimited-text exports.

Embedding binary layout (big-endian)::

    magic   5 bytes  b"NLEMB"
    version uint16
    M       uint64   rows
    D       uint64   columns
    flags   uint8    0x1 identity column, 0x2 camera column
    M*D float64 row-major embeddings, then M int64 identities and M int64
    cameras when flagged.

The text form starts with ``NLEMB-TEXT,<version>,<M>,<D>,<flags>`` and has one
comma-separated row per embedding (values, then identity, then camera).
Every CSV written here may open with a ``# manifest <hash>`` comment line.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .const import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    EMBEDDING_FLAG_CAMERA,
    EMBEDDING_FLAG_IDENTITY,
    EMBEDDING_MAGIC,
    EMBEDDING_TEXT_MAGIC,
    EMBEDDING_VERSION,
    TRAINING_LOG_COLUMNS,
)
from .evaluation import EvalReport
from .exceptions import DataError, EvaluationError
from .losses import CenterBank
from .model import BackboneConfig, NeckModel, NeckVariant
from .tensor import Tensor
from .training import TrainingLog, TrainingRecord, TrainingResult

_LOGGER = logging.getLogger(__name__)

_EMBEDDING_HEADER = struct.Struct(">HQQB")
_PARAM_PREFIX = "param/"


@dataclass(eq=False)
class Checkpoint:
    """A trained model with the data transform it was trained under."""

    model: NeckModel
    label_map: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    manifest_hash: str = ""
    options: dict[str, Any] = field(default_factory=dict)
    centers: CenterBank | None = None

    def normalize(self, images: np.ndarray) -> np.ndarray:
        """Apply the training-split channel normalization."""
        return (images - self.norm_mean[None, :, None, None]) / self.norm_std[None, :, None, None]


def save_checkpoint(
    path: str | Path,
    result: TrainingResult,
    manifest_hash: str = "",
    options: dict[str, Any] | None = None,
) -> None:
    """Write model weights, running statistics and normalization to ``.npz``."""
    model = result.model
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "manifest_hash": manifest_hash,
        "input_shape": list(model.config.input_shape),
        "blocks": list(model.config.blocks),
        "last_stride": model.config.last_stride,
        "variant": model.variant.value,
        "num_classes": model.num_classes,
        "classifier_bias": model.head is not None and model.head.bias is not None,
        "bn_bias_trainable": model.bn is None or model.bn.beta.requires_grad,
        "options": options or {},
    }
    arrays = {f"{_PARAM_PREFIX}{key}": value for key, value in model.state_dict().items()}
    arrays["label_map"] = result.label_map
    arrays["norm_mean"] = result.norm_mean
    arrays["norm_std"] = result.norm_std
    if result.centers is not None:
        arrays["centers"] = result.centers.centers.numpy()
        meta["center_mode"] = result.centers.mode
        meta["center_lr"] = result.centers.learning_rate
    path = Path(path)
    with path.open("wb") as handle:
        np.savez(handle, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    _LOGGER.info("Wrote checkpoint %s", path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Rebuild the model stored by :func:`save_checkpoint`."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            arrays = {key: archive[key] for key in archive.files if key != "meta"}
    except (OSError, ValueError, KeyError) as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")

    config = BackboneConfig(tuple(meta["input_shape"]), tuple(meta["blocks"]), meta["last_stride"])
    model = NeckModel(
        config,
        NeckVariant(meta["variant"]),
        meta["num_classes"],
        classifier_bias=meta["classifier_bias"],
        bn_bias_trainable=meta["bn_bias_trainable"],
    )
    model.load_state_dict(
        {
            key[len(_PARAM_PREFIX) :]: value
            for key, value in arrays.items()
            if key.startswith(_PARAM_PREFIX)
        }
    )
    centers = None
    if "centers" in arrays:
        centers = CenterBank(
            Tensor(arrays["centers"], name="centers"), meta["center_lr"], meta["center_mode"]
        )
    return Checkpoint(
        model,
        arrays["label_map"],
        arrays["norm_mean"],
        arrays["norm_std"],
        meta["manifest_hash"],
        meta["options"],
        centers,
    )


# Embeddings


def _flags(labels: np.ndarray | None, cameras: np.ndarray | None) -> int:
    return (EMBEDDING_FLAG_IDENTITY if labels is not None else 0) | (
        EMBEDDING_FLAG_CAMERA if cameras is not None else 0
    )


def _check_columns(
    embeddings: np.ndarray, labels: np.ndarray | None, cameras: np.ndarray | None
) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise DataError(f"embeddings must be (M, D), got {embeddings.shape}")
    for name, column in (("identity", labels), ("camera", cameras)):
        if column is not None and np.shape(column) != (len(embeddings),):
            raise DataError(
                f"{name} column has shape {np.shape(column)}, expected ({len(embeddings)},)"
            )
    return embeddings


def write_embeddings(
    path: str | Path,
    embeddings: np.ndarray,
    labels: np.ndarray | None = None,
    cameras: np.ndarray | None = None,
) -> None:
    """Write the binary embedding format."""
    embeddings = _check_columns(embeddings, labels, cameras)
    rows, dim = embeddings.shape
    parts = [
        EMBEDDING_MAGIC,
        _EMBEDDING_HEADER.pack(EMBEDDING_VERSION, rows, dim, _flags(labels, cameras)),
        embeddings.astype(">f8").tobytes(),
    ]
    for column in (labels, cameras):
        if column is not None:
            parts.append(np.asarray(column).astype(">i8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Read the binary embedding format.

    Returns:
        embeddings, identities (or None), cameras (or None)
    """
    raw = Path(path).read_bytes()
    start = len(EMBEDDING_MAGIC) + _EMBEDDING_HEADER.size
    if raw[: len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC or len(raw) < start:
        raise DataError(f"{path} is not an embedding file")
    version, rows, dim, flags = _EMBEDDING_HEADER.unpack_from(raw, len(EMBEDDING_MAGIC))
    if version != EMBEDDING_VERSION:
        raise DataError(f"{path}: unsupported embedding version {version}")
    columns = [bool(flags & EMBEDDING_FLAG_IDENTITY), bool(flags & EMBEDDING_FLAG_CAMERA)]
    expected = start + 8 * (rows * dim + rows * sum(columns))
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    embeddings = np.frombuffer(raw, dtype=">f8", count=rows * dim, offset=start)
    offset = start + 8 * rows * dim
    extra: list[np.ndarray | None] = []
    for present in columns:
        if not present:
            extra.append(None)
            continue
        extra.append(np.frombuffer(raw, dtype=">i8", count=rows, offset=offset).astype(np.int64))
        offset += 8 * rows
    return embeddings.astype(np.float64).reshape(rows, dim), extra[0], extra[1]


def write_embeddings_text(
    path: str | Path,
    embeddings: np.ndarray,
    labels: np.ndarray | None = None,
    cameras: np.ndarray | None = None,
) -> None:
    """Write the delimited-text embedding format with full float precision."""
    embeddings = _check_columns(embeddings, labels, cameras)
    rows, dim = embeddings.shape
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [EMBEDDING_TEXT_MAGIC, EMBEDDING_VERSION, rows, dim, _flags(labels, cameras)]
        )
        for index, row in enumerate(embeddings):
            values = [repr(float(value)) for value in row]
            for column in (labels, cameras):
                if column is not None:
                    values.append(str(int(column[index])))
            writer.writerow(values)


def read_embeddings_text(
    path: str | Path,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Read the delimited-text embedding format."""
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != EMBEDDING_TEXT_MAGIC:
            raise DataError(f"{path} is not a text embedding file")
        version, rows, dim, flags = (int(value) for value in header[1:5])
        if version != EMBEDDING_VERSION:
            raise DataError(f"{path}: unsupported embedding version {version}")
        body = list(reader)
    if len(body) != rows:
        raise DataError(f"{path}: header announces {rows} rows, found {len(body)}")
    values = [[float(value) for value in row[:dim]] for row in body]
    embeddings = np.array(values, dtype=np.float64).reshape(rows, dim)
    column = dim
    extra: list[np.ndarray | None] = []
    for flag in (EMBEDDING_FLAG_IDENTITY, EMBEDDING_FLAG_CAMERA):
        if flags & flag:
            extra.append(np.array([int(row[column]) for row in body], dtype=np.int64))
            column += 1
        else:
            extra.append(None)
    return embeddings, extra[0], extra[1]


# Delimited-text tables


def write_table(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    manifest_hash: str | None = None,
) -> None:
    """Write a CSV table; floats are written with full precision."""
    with Path(path).open("w", newline="") as handle:
        if manifest_hash:
            handle.write(f"# manifest {manifest_hash}\n")
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(value) if isinstance(value, float) else value for value in row])


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a table written by :func:`write_table`, skipping comment lines."""
    with Path(path).open(newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise DataError(f"{path} has no header row")
    return rows[0], rows[1:]


def write_training_log(
    path: str | Path, log: TrainingLog, manifest_hash: str | None = None
) -> None:
    """Write one row per iteration."""
    write_table(path, TRAINING_LOG_COLUMNS, (record.as_row() for record in log), manifest_hash)


def read_training_log(path: str | Path) -> TrainingLog:
    """Read a log written by :func:`write_training_log`."""
    header, rows = read_table(path)
    if tuple(header) != TRAINING_LOG_COLUMNS:
        raise DataError(f"{path}: unexpected training log columns {header}")
    log = TrainingLog()
    for row in rows:
        log.append(
            TrainingRecord(int(row[0]), int(row[1]), *(float(value) for value in row[2:]))
        )
    return log


def write_report(path: str | Path, report: EvalReport, manifest_hash: str | None = None) -> None:
    """Write an evaluation report as ``key,value`` rows."""
    write_table(path, ("key", "value"), report.as_items(), manifest_hash)


def export_embedding_scatter(
    embeddings: np.ndarray,
    labels: np.ndarray,
    path: str | Path,
    manifest_hash: str | None = None,
) -> None:
    """Write 2-D embeddings as ``x,y,label`` rows for plotting."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != 2:
        raise EvaluationError(f"scatter export needs (M, 2) embeddings, got {embeddings.shape}")
    write_table(
        path,
        ("x", "y", "label"),
        (
            (float(x), float(y), int(label))
            for (x, y), label in zip(embeddings, labels, strict=True)
        ),
        manifest_hash,
    )

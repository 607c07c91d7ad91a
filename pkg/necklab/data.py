"""Identity-labeled datasets: IDX files, benchmark image folders and synthetic blobs."""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .const import (
    BENCHMARK_NAME_PATTERN,
    CONF_QUERY_FRACTION,
    CONF_SPLIT_POLICY,
    CONF_TRAIN_FRACTION,
    DEFAULT_BLOBS_CAMERAS,
    DEFAULT_BLOBS_IDENTITIES,
    DEFAULT_BLOBS_NOISE,
    DEFAULT_BLOBS_SAMPLES,
    DEFAULT_BLOBS_SIZE,
    DEFAULT_QUERY_FRACTION,
    DEFAULT_SEED,
    DEFAULT_TRAIN_FRACTION,
    IDX_IMAGE_MAGIC,
    IDX_LABEL_MAGIC,
    JUNK_LABEL,
    POLICY_CLASS_SHARED,
    POLICY_IDENTITY_DISJOINT,
    SPLIT_GALLERY,
    SPLIT_QUERY,
    SPLIT_TRAIN,
)
from .exceptions import ConfigError, DataError, IdxFormatError

_LOGGER = logging.getLogger(__name__)

_BENCHMARK_NAME = re.compile(BENCHMARK_NAME_PATTERN)
_PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


@dataclass(frozen=True, eq=False)
class IdentityDataset:
    """Images with identity labels and optional camera labels.

    ``images`` is ``(M, C, H, W)`` float64. Samples labelled ``-1`` are junk:
    they stay in the arrays but never enter the identity index.
    """

    images: np.ndarray
    labels: np.ndarray
    cameras: np.ndarray | None = None
    split: str = SPLIT_TRAIN
    skipped: int = 0

    def __post_init__(self) -> None:
        """Validate that arrays agree in length."""
        if self.images.ndim != 4:
            raise DataError(f"images must be (M, C, H, W), got shape {self.images.shape}")
        if self.labels.shape != (len(self.images),):
            raise DataError(f"{len(self.images)} images but labels of shape {self.labels.shape}")
        if self.cameras is not None and self.cameras.shape != self.labels.shape:
            raise DataError(f"{len(self.images)} images but cameras of shape {self.cameras.shape}")

    def __len__(self) -> int:
        """Return the number of samples."""
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        """Return ``(C, H, W)``."""
        return tuple(self.images.shape[1:])

    @property
    def has_cameras(self) -> bool:
        """Return True if camera labels are known."""
        return self.cameras is not None

    @cached_property
    def identity_index(self) -> dict[int, np.ndarray]:
        """Map every non-junk identity to its sample indices."""
        return {
            int(identity): np.flatnonzero(self.labels == identity)
            for identity in np.unique(self.labels)
            if identity != JUNK_LABEL
        }

    @property
    def identities(self) -> list[int]:
        """Return the sorted non-junk identities."""
        return sorted(self.identity_index)

    def subset(self, indices: np.ndarray, split: str | None = None) -> IdentityDataset:
        """Return the samples at ``indices``, in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        return IdentityDataset(
            self.images[indices],
            self.labels[indices],
            None if self.cameras is None else self.cameras[indices],
            split or self.split,
        )

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Return per-channel mean and standard deviation (std floored at 1e-8)."""
        if len(self) == 0:
            channels = self.images.shape[1]
            return np.zeros(channels), np.ones(channels)
        mean = self.images.mean(axis=(0, 2, 3))
        std = np.maximum(self.images.std(axis=(0, 2, 3)), 1e-8)
        return mean, std

    def normalized(self, mean: np.ndarray, std: np.ndarray) -> IdentityDataset:
        """Return the dataset with ``(x - mean) / std`` applied per channel."""
        images = (self.images - mean[None, :, None, None]) / std[None, :, None, None]
        return replace(self, images=images)

    def relabeled(self) -> tuple[IdentityDataset, np.ndarray]:
        """Drop junk and map identities to ``0..N-1``.

        Returns:
            the relabeled dataset and the original identity of every class
        """
        keep = np.flatnonzero(self.labels != JUNK_LABEL)
        kept = self.subset(keep)
        label_map, labels = np.unique(kept.labels, return_inverse=True)
        return replace(kept, labels=labels.astype(np.int64)), label_map.astype(np.int64)


# IDX


def _read_header(raw: bytes, path: Path, dims: int) -> tuple[int, ...]:
    size = 4 + 4 * dims
    if len(raw) < size:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} of {size} bytes)")
    return struct.unpack(f">{1 + dims}I", raw[:size])


def load_idx(images_path: str | Path, labels_path: str | Path) -> IdentityDataset:
    """Load an IDX image file and its label file; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    try:
        image_raw = images_path.read_bytes()
        label_raw = labels_path.read_bytes()
    except OSError as err:
        raise DataError(f"cannot read IDX files: {err}") from err

    magic, count, rows, cols = _read_header(image_raw, images_path, 3)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: wrong magic for images 0x{magic:08x}")
    label_magic, label_count = _read_header(label_raw, labels_path, 1)
    if label_magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(f"{labels_path}: wrong magic for labels 0x{label_magic:08x}")
    if count != label_count:
        raise IdxFormatError(f"count mismatch: {count} images but {label_count} labels")

    pixels = image_raw[16:]
    if len(pixels) < count * rows * cols:
        raise IdxFormatError(
            f"{images_path}: truncated, {len(pixels)} of {count * rows * cols} pixel bytes"
        )
    if len(label_raw) - 8 < count:
        raise IdxFormatError(f"{labels_path}: truncated, {len(label_raw) - 8} of {count} labels")

    images = np.frombuffer(pixels, dtype=np.uint8, count=count * rows * cols)
    images = images.reshape(count, 1, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    _LOGGER.info("Loaded %d IDX images of %dx%d from %s", count, rows, cols, images_path)
    return IdentityDataset(images, labels)


def write_idx(dataset: IdentityDataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a single-channel dataset as IDX files; pixels are quantized to bytes."""
    if dataset.image_shape[0] != 1:
        raise DataError(f"IDX stores single-channel images, got {dataset.image_shape[0]} channels")
    if len(dataset) and (dataset.labels.min() < 0 or dataset.labels.max() > 255):
        raise DataError("IDX labels must lie in 0..255")
    count, _, rows, cols = dataset.images.shape
    pixels = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGE_MAGIC, count, rows, cols) + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABEL_MAGIC, count) + dataset.labels.astype(np.uint8).tobytes()
    )


# Image folders


def parse_benchmark_name(name: str) -> tuple[int, int] | None:
    """Return ``(pid, camera)`` from a ``<pid>_c<camera>...`` file name."""
    match = _BENCHMARK_NAME.match(name)
    if match is None:
        return None
    return int(match.group(1)), int(match.group(2))


def _pnm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Return ``count`` header tokens and the offset just past the last one."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PNM header")
        tokens.append(raw[start:pos])
    return tokens, pos


def read_pnm(path: str | Path) -> np.ndarray:
    """Decode a PGM or PPM file (P2, P3, P5, P6) to a ``(C, H, W)`` array in [0, 1]."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise DataError(f"{path}: unsupported image format {magic!r}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    (width, height, maxval), pos = _pnm_tokens(raw[2:], 3)
    width, height, maxval = int(width), int(height), int(maxval)
    size = width * height * channels
    body = raw[2 + pos + 1 :]
    if magic in (b"P2", b"P3"):
        values = np.array(body.split(), dtype=np.float64)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        values = np.frombuffer(body, dtype=dtype, count=min(size, len(body) // dtype.itemsize))
    if values.size != size:
        raise DataError(f"{path}: expected {size} samples, found {values.size}")
    image = values.astype(np.float64).reshape(height, width, channels) / maxval
    return image.transpose(2, 0, 1)


def load_image_folder(root: str | Path) -> IdentityDataset:
    """Load PGM/PPM images named ``<pid>_c<camera>...`` from a directory.

    Files whose names do not parse, or in other formats, are skipped with a
    warning and counted in ``skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    images, labels, cameras = [], [], []
    skipped = 0
    for path in sorted(p for p in root.iterdir() if p.is_file()):
        parsed = parse_benchmark_name(path.name)
        if parsed is None or path.suffix.lower() not in _PNM_SUFFIXES:
            _LOGGER.warning("Skipping %s: not a <pid>_c<camera> PGM/PPM image", path.name)
            skipped += 1
            continue
        images.append(read_pnm(path))
        labels.append(parsed[0])
        cameras.append(parsed[1])

    if not images:
        _LOGGER.info("No images found in %s", root)
        return IdentityDataset(
            np.zeros((0, 1, 0, 0)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            skipped=skipped,
        )
    shapes = {image.shape for image in images}
    if len(shapes) > 1:
        raise DataError(f"{root}: images have different shapes {sorted(shapes)}")
    dataset = IdentityDataset(
        np.stack(images),
        np.array(labels, dtype=np.int64),
        np.array(cameras, dtype=np.int64),
        skipped=skipped,
    )
    _LOGGER.info(
        "Loaded %d images of %d identities from %s (%d skipped, %d junk)",
        len(dataset),
        len(dataset.identity_index),
        root,
        skipped,
        int((dataset.labels == JUNK_LABEL).sum()),
    )
    return dataset


# Synthetic identities


@dataclass(frozen=True)
class SyntheticBlobConfig:
    """Per-identity random templates plus Gaussian noise."""

    identities: int = DEFAULT_BLOBS_IDENTITIES
    samples: int = DEFAULT_BLOBS_SAMPLES
    size: int = DEFAULT_BLOBS_SIZE
    noise: float = DEFAULT_BLOBS_NOISE
    cameras: int = DEFAULT_BLOBS_CAMERAS
    channels: int = 1
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if min(self.identities, self.samples, self.size, self.cameras, self.channels) < 1:
            raise ConfigError(f"blob counts and sizes must be positive: {self}")
        if self.noise < 0:
            raise ConfigError(f"noise must be non-negative, got {self.noise}")


def make_blobs(cfg: SyntheticBlobConfig) -> IdentityDataset:
    """Generate ``identities * samples`` images; cameras cycle through ``1..cameras``."""
    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.channels, cfg.size, cfg.size)
    templates = rng.random((cfg.identities, *shape))
    noise = rng.standard_normal((cfg.identities, cfg.samples, *shape))
    images = templates[:, None] + cfg.noise * noise
    labels = np.repeat(np.arange(cfg.identities, dtype=np.int64), cfg.samples)
    cameras = np.tile(np.arange(cfg.samples, dtype=np.int64) % cfg.cameras + 1, cfg.identities)
    return IdentityDataset(images.reshape(-1, *shape), labels, cameras)


# Splitting


def _query_gallery(
    dataset: IdentityDataset,
    test_indices: np.ndarray,
    query_fraction: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Split test samples so every query identity keeps at least one gallery sample."""
    query, gallery = [], []
    labels = dataset.labels[test_indices]
    for identity in np.unique(labels):
        members = test_indices[labels == identity]
        if identity == JUNK_LABEL or members.size < 2:
            gallery.extend(members.tolist())
            continue
        members = rng.permutation(members)
        n_query = min(max(1, round(members.size * query_fraction)), members.size - 1)
        query.extend(members[:n_query].tolist())
        gallery.extend(members[n_query:].tolist())
    return np.sort(np.array(query, dtype=np.int64)), np.sort(np.array(gallery, dtype=np.int64))


def split(
    dataset: IdentityDataset,
    policy: str = POLICY_IDENTITY_DISJOINT,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    query_fraction: float = DEFAULT_QUERY_FRACTION,
    seed: int = DEFAULT_SEED,
) -> tuple[IdentityDataset, IdentityDataset, IdentityDataset]:
    """Split into train, query and gallery sets.

    ``identity-disjoint`` gives whole identities to train or test;
    ``class-shared`` splits the samples of every identity. Test samples are
    then divided into query and gallery per identity. Junk samples never
    train and always land in the gallery.
    """
    if not 0.0 <= train_fraction < 1.0:
        raise ConfigError(
            f"train fraction must lie in [0, 1), got {train_fraction}", CONF_TRAIN_FRACTION
        )
    if not 0.0 < query_fraction < 1.0:
        raise ConfigError(
            f"query fraction must lie in (0, 1), got {query_fraction}", CONF_QUERY_FRACTION
        )
    rng = np.random.default_rng(seed)
    identities = np.array(dataset.identities, dtype=np.int64)
    junk = np.flatnonzero(dataset.labels == JUNK_LABEL)

    if policy == POLICY_IDENTITY_DISJOINT:
        shuffled = rng.permutation(identities)
        n_train = round(identities.size * train_fraction)
        if train_fraction > 0 and n_train < 1:
            raise DataError(f"{identities.size} identities leave none for training")
        if identities.size - n_train < 1:
            raise DataError(f"{identities.size} identities leave none for testing")
        train_ids = set(shuffled[:n_train].tolist())
        train_idx = np.flatnonzero(np.isin(dataset.labels, list(train_ids)))
        test_idx = np.flatnonzero(
            ~np.isin(dataset.labels, list(train_ids)) & (dataset.labels != JUNK_LABEL)
        )
    elif policy == POLICY_CLASS_SHARED:
        train_parts, test_parts = [], []
        for identity in identities:
            members = rng.permutation(dataset.identity_index[int(identity)])
            n_train = round(members.size * train_fraction)
            train_parts.append(members[:n_train])
            test_parts.append(members[n_train:])
        train_idx = np.sort(np.concatenate(train_parts)) if train_parts else np.zeros(0, np.int64)
        test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.zeros(0, np.int64)
    else:
        raise ConfigError(f"unknown split policy {policy!r}", CONF_SPLIT_POLICY)

    query_idx, gallery_idx = _query_gallery(
        dataset, np.concatenate([test_idx, junk]).astype(np.int64), query_fraction, rng
    )
    if train_fraction > 0 and train_idx.size == 0:
        raise DataError("split leaves no training samples")
    if query_idx.size == 0:
        raise DataError("split leaves no query; test identities need at least two samples")
    train, query, gallery = (
        dataset.subset(train_idx, SPLIT_TRAIN),
        dataset.subset(query_idx, SPLIT_QUERY),
        dataset.subset(gallery_idx, SPLIT_GALLERY),
    )
    _LOGGER.info(
        "Split (%s): %d train / %d query / %d gallery samples",
        policy,
        len(train),
        len(query),
        len(gallery),
    )
    return train, query, gallery

"""Experiment manifests: parsing, validation, presets and typed configs."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CENTER_MODE_OPTIMIZER,
    CENTER_MODE_RULE,
    CONF_BASE_LR,
    CONF_BETA,
    CONF_BLOBS_CAMERAS,
    CONF_BLOBS_IDENTITIES,
    CONF_BLOBS_NOISE,
    CONF_BLOBS_SAMPLES,
    CONF_BLOBS_SIZE,
    CONF_BLOCKS,
    CONF_BN_BIAS_TRAINABLE,
    CONF_CENTER_LOSS,
    CONF_CENTER_LR,
    CONF_CENTER_MODE,
    CONF_CLASSIFIER_BIAS,
    CONF_DECAY_EPOCHS,
    CONF_DECAY_FACTORS,
    CONF_EPSILON,
    CONF_EVAL_CAMERA_FILTER,
    CONF_EVAL_EXPORT_EMBEDDINGS,
    CONF_EVAL_FEATURES,
    CONF_EVAL_K1,
    CONF_EVAL_K2,
    CONF_EVAL_LAMBDA,
    CONF_EVAL_MAX_RANK,
    CONF_EVAL_METRICS,
    CONF_EVAL_RERANK,
    CONF_ITERS_PER_EPOCH,
    CONF_K,
    CONF_LABEL_SMOOTH,
    CONF_LAST_STRIDE_1,
    CONF_LIMIT,
    CONF_MARGIN,
    CONF_NECK,
    CONF_OUTPUT_DIR,
    CONF_P,
    CONF_PRESET,
    CONF_QUERY_FRACTION,
    CONF_REA,
    CONF_REA_FILL,
    CONF_REA_P,
    CONF_REA_R1,
    CONF_REA_SH,
    CONF_REA_SL,
    CONF_RUN_ID,
    CONF_SEED,
    CONF_SPLIT_POLICY,
    CONF_TEST_KIND,
    CONF_TEST_LABELS,
    CONF_TEST_PATH,
    CONF_TIME_SCALE,
    CONF_TOTAL_EPOCHS,
    CONF_TRAIN_FRACTION,
    CONF_TRAIN_KIND,
    CONF_TRAIN_LABELS,
    CONF_TRAIN_PATH,
    CONF_WARMUP,
    CONF_WARMUP_EPOCHS,
    CONF_WEIGHT_DECAY,
    DATA_KIND_BLOBS,
    DATA_KIND_FOLDER,
    DATA_KIND_IDX,
    DEFAULT_BASE_LR,
    DEFAULT_BETA,
    DEFAULT_BLOBS_CAMERAS,
    DEFAULT_BLOBS_IDENTITIES,
    DEFAULT_BLOBS_NOISE,
    DEFAULT_BLOBS_SAMPLES,
    DEFAULT_BLOBS_SIZE,
    DEFAULT_BLOCKS,
    DEFAULT_CENTER_LR,
    DEFAULT_DECAY_EPOCHS,
    DEFAULT_DECAY_FACTORS,
    DEFAULT_EPSILON,
    DEFAULT_K,
    DEFAULT_K1,
    DEFAULT_K2,
    DEFAULT_LAMBDA,
    DEFAULT_MARGIN,
    DEFAULT_MAX_RANK,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_P,
    DEFAULT_QUERY_FRACTION,
    DEFAULT_REA_P,
    DEFAULT_REA_R1,
    DEFAULT_REA_SH,
    DEFAULT_REA_SL,
    DEFAULT_RUN_ID,
    DEFAULT_SEED,
    DEFAULT_TIME_SCALE,
    DEFAULT_TOTAL_EPOCHS,
    DEFAULT_TRAIN_FRACTION,
    DEFAULT_WARMUP_EPOCHS,
    DEFAULT_WEIGHT_DECAY,
    FEATURES,
    METRICS,
    POLICY_CLASS_SHARED,
    POLICY_IDENTITY_DISJOINT,
    REA_FILL_MEAN,
    REA_FILL_RANDOM,
    RERANK_BOTH,
    RERANK_OFF,
    RERANK_ON,
)
from .data import SyntheticBlobConfig
from .exceptions import ConfigError
from .losses import LossWeights, TripletConfig
from .model import NeckVariant
from .sampler import PKSamplerConfig
from .training import ScheduleConfig, TrainConfig
from .transforms import REAConfig

_LOGGER = logging.getLogger(__name__)

HASH_LENGTH = 12


def _tuple_of(cast: Callable[[Any], Any]) -> Callable[[Any], tuple]:
    """Return a validator accepting ``"a, b"`` strings or sequences."""

    def validate(value: Any) -> tuple:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
        elif isinstance(value, Iterable):
            items = list(value)
        else:
            items = [value]
        try:
            return tuple(cast(item) for item in items)
        except (TypeError, ValueError) as err:
            raise vol.Invalid(f"expected a comma-separated list, got {value!r}") from err

    return validate


def _choices(allowed: Iterable[str]) -> Callable[[Any], tuple[str, ...]]:
    allowed = tuple(allowed)
    parse = _tuple_of(str)

    def validate(value: Any) -> tuple[str, ...]:
        items = parse(value)
        unknown = [item for item in items if item not in allowed]
        if unknown or not items:
            raise vol.Invalid(f"expected values from {allowed}, got {value!r}")
        return items

    return validate


_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))
_FRACTION = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))
_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))

PRESET_NAMES: tuple[str, ...] = (
    "baseline-s",
    "+warmup",
    "+rea",
    "+label-smooth",
    "+stride-1",
    "+bnneck",
    "+center",
    "full",
    "baseline1",
    "baseline2",
    "baseline3",
)

OPTIONS_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_RUN_ID, default=DEFAULT_RUN_ID): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_OUTPUT_DIR, default=DEFAULT_OUTPUT_DIR): str,
        vol.Optional(CONF_PRESET): vol.In(PRESET_NAMES),
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): _NON_NEGATIVE_INT,
        vol.Optional(CONF_WARMUP, default=False): vol.Boolean(),
        vol.Optional(CONF_REA, default=False): vol.Boolean(),
        vol.Optional(CONF_LABEL_SMOOTH, default=False): vol.Boolean(),
        vol.Optional(CONF_LAST_STRIDE_1, default=False): vol.Boolean(),
        vol.Optional(CONF_NECK, default=NeckVariant.NECK3.value): vol.In(
            [variant.value for variant in NeckVariant]
        ),
        vol.Optional(CONF_CENTER_LOSS, default=False): vol.Boolean(),
        vol.Optional(CONF_REA_P, default=DEFAULT_REA_P): _FRACTION,
        vol.Optional(CONF_REA_SL, default=DEFAULT_REA_SL): _FRACTION,
        vol.Optional(CONF_REA_SH, default=DEFAULT_REA_SH): _FRACTION,
        vol.Optional(CONF_REA_R1, default=DEFAULT_REA_R1): _FRACTION,
        vol.Optional(CONF_REA_FILL, default=REA_FILL_MEAN): vol.In(
            [REA_FILL_MEAN, REA_FILL_RANDOM]
        ),
        vol.Optional(CONF_EPSILON, default=DEFAULT_EPSILON): _FRACTION,
        vol.Optional(CONF_MARGIN, default=DEFAULT_MARGIN): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_BETA, default=DEFAULT_BETA): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_CENTER_LR, default=DEFAULT_CENTER_LR): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_CENTER_MODE, default=CENTER_MODE_RULE): vol.In(
            [CENTER_MODE_RULE, CENTER_MODE_OPTIMIZER]
        ),
        vol.Optional(CONF_BASE_LR, default=DEFAULT_BASE_LR): _POSITIVE_FLOAT,
        vol.Optional(CONF_WARMUP_EPOCHS, default=DEFAULT_WARMUP_EPOCHS): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_DECAY_EPOCHS, default=DEFAULT_DECAY_EPOCHS): _tuple_of(float),
        vol.Optional(CONF_DECAY_FACTORS, default=DEFAULT_DECAY_FACTORS): _tuple_of(float),
        vol.Optional(CONF_TOTAL_EPOCHS, default=DEFAULT_TOTAL_EPOCHS): _POSITIVE_FLOAT,
        vol.Optional(CONF_TIME_SCALE, default=DEFAULT_TIME_SCALE): _POSITIVE_FLOAT,
        # 0 derives the count from the training-set size
        vol.Optional(CONF_ITERS_PER_EPOCH, default=0): _NON_NEGATIVE_INT,
        vol.Optional(CONF_P, default=DEFAULT_P): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional(CONF_K, default=DEFAULT_K): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional(CONF_WEIGHT_DECAY, default=DEFAULT_WEIGHT_DECAY): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_BLOCKS, default=DEFAULT_BLOCKS): _tuple_of(int),
        vol.Optional(CONF_CLASSIFIER_BIAS, default=False): vol.Boolean(),
        vol.Optional(CONF_BN_BIAS_TRAINABLE, default=True): vol.Boolean(),
        vol.Optional(CONF_TRAIN_KIND, default=DATA_KIND_BLOBS): vol.In(
            [DATA_KIND_IDX, DATA_KIND_FOLDER, DATA_KIND_BLOBS]
        ),
        vol.Optional(CONF_TRAIN_PATH, default=""): str,
        vol.Optional(CONF_TRAIN_LABELS, default=""): str,
        vol.Optional(CONF_TEST_KIND): vol.In([DATA_KIND_IDX, DATA_KIND_FOLDER, DATA_KIND_BLOBS]),
        vol.Optional(CONF_TEST_PATH): str,
        vol.Optional(CONF_TEST_LABELS): str,
        vol.Optional(CONF_BLOBS_IDENTITIES, default=DEFAULT_BLOBS_IDENTITIES): _POSITIVE_INT,
        vol.Optional(CONF_BLOBS_SAMPLES, default=DEFAULT_BLOBS_SAMPLES): _POSITIVE_INT,
        vol.Optional(CONF_BLOBS_SIZE, default=DEFAULT_BLOBS_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_BLOBS_NOISE, default=DEFAULT_BLOBS_NOISE): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_BLOBS_CAMERAS, default=DEFAULT_BLOBS_CAMERAS): _POSITIVE_INT,
        # 0 keeps every sample
        vol.Optional(CONF_LIMIT, default=0): _NON_NEGATIVE_INT,
        vol.Optional(CONF_SPLIT_POLICY, default=POLICY_IDENTITY_DISJOINT): vol.In(
            [POLICY_IDENTITY_DISJOINT, POLICY_CLASS_SHARED]
        ),
        vol.Optional(CONF_TRAIN_FRACTION, default=DEFAULT_TRAIN_FRACTION): _FRACTION,
        vol.Optional(CONF_QUERY_FRACTION, default=DEFAULT_QUERY_FRACTION): _FRACTION,
        vol.Optional(CONF_EVAL_FEATURES, default=FEATURES): _choices(FEATURES),
        vol.Optional(CONF_EVAL_METRICS, default=METRICS): _choices(METRICS),
        vol.Optional(CONF_EVAL_RERANK, default=RERANK_OFF): vol.In(
            [RERANK_OFF, RERANK_ON, RERANK_BOTH]
        ),
        vol.Optional(CONF_EVAL_K1, default=DEFAULT_K1): _POSITIVE_INT,
        vol.Optional(CONF_EVAL_K2, default=DEFAULT_K2): _POSITIVE_INT,
        vol.Optional(CONF_EVAL_LAMBDA, default=DEFAULT_LAMBDA): _FRACTION,
        vol.Optional(CONF_EVAL_MAX_RANK, default=DEFAULT_MAX_RANK): _POSITIVE_INT,
        vol.Optional(CONF_EVAL_CAMERA_FILTER, default=True): vol.Boolean(),
        vol.Optional(CONF_EVAL_EXPORT_EMBEDDINGS, default=False): vol.Boolean(),
    }
)

_TRICKS_OFF: dict[str, Any] = {
    CONF_WARMUP: False,
    CONF_REA: False,
    CONF_LABEL_SMOOTH: False,
    CONF_LAST_STRIDE_1: False,
    CONF_NECK: NeckVariant.NECK3.value,
    CONF_CENTER_LOSS: False,
}
_TRICKS_ON: dict[str, Any] = {
    CONF_WARMUP: True,
    CONF_REA: True,
    CONF_LABEL_SMOOTH: True,
    CONF_LAST_STRIDE_1: True,
}


def _cumulative_presets() -> dict[str, dict[str, Any]]:
    steps = (
        ("baseline-s", {}),
        ("+warmup", {CONF_WARMUP: True}),
        ("+rea", {CONF_REA: True}),
        ("+label-smooth", {CONF_LABEL_SMOOTH: True}),
        ("+stride-1", {CONF_LAST_STRIDE_1: True}),
        ("+bnneck", {CONF_NECK: NeckVariant.BNNECK.value}),
        ("+center", {CONF_CENTER_LOSS: True, CONF_BETA: DEFAULT_BETA}),
    )
    presets = {}
    current = dict(_TRICKS_OFF)
    for name, change in steps:
        current = {**current, **change}
        presets[name] = current
    return presets


PRESETS: dict[str, dict[str, Any]] = {
    **_cumulative_presets(),
    "baseline1": {**_TRICKS_ON, CONF_NECK: NeckVariant.BNNECK1.value, CONF_CENTER_LOSS: False},
    "baseline2": {**_TRICKS_ON, CONF_NECK: NeckVariant.BNNECK.value, CONF_CENTER_LOSS: False},
    "baseline3": {**_TRICKS_ON, CONF_NECK: NeckVariant.BNNECK.value, CONF_CENTER_LOSS: True},
}
PRESETS["full"] = PRESETS["+center"]

TRICK_ROWS: tuple[str, ...] = PRESET_NAMES[:7]


def parse_manifest_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    options: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {number}: expected 'key = value', got {line.strip()!r}")
        if key in options:
            raise ConfigError(f"line {number}: duplicate key", key)
        options[key] = value.strip()
    return options


def parse_assignment(text: str) -> tuple[str, str]:
    """Parse one ``key=value`` command-line override."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def validate_options(options: Mapping[str, Any]) -> dict[str, Any]:
    """Validate and default a flat option mapping."""
    try:
        return OPTIONS_SCHEMA(dict(options))
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        key = str(first.path[0]) if first.path else None
        raise ConfigError(first.msg, key) from err


def resolve_options(
    file_options: Mapping[str, Any] | None = None,
    preset: str | None = None,
    overrides: Iterable[tuple[str, Any]] = (),
) -> dict[str, Any]:
    """Layer a preset, the file's own keys and overrides, then validate."""
    file_options = dict(file_options or {})
    overrides = dict(overrides)
    preset = preset or overrides.get(CONF_PRESET) or file_options.get(CONF_PRESET)
    options: dict[str, Any] = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}, expected one of {PRESET_NAMES}", CONF_PRESET
            )
        options.update(PRESETS[preset])
        options[CONF_PRESET] = preset
    options.update({key: value for key, value in file_options.items() if key != CONF_PRESET})
    options.update({key: value for key, value in overrides.items() if key != CONF_PRESET})
    return validate_options(options)


def render_value(value: Any) -> str:
    """Render an option value the way manifests write it."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(render_value(item) for item in value)
    return str(value)


def render_options(options: Mapping[str, Any]) -> str:
    """Return the canonical sorted ``key = value`` text of resolved options."""
    return "".join(f"{key} = {render_value(options[key])}\n" for key in sorted(options))


def manifest_hash(options: Mapping[str, Any]) -> str:
    """Return the first 12 hex digits of the SHA-256 of the canonical rendering."""
    return hashlib.sha256(render_options(options).encode()).hexdigest()[:HASH_LENGTH]


@dataclass(frozen=True)
class DataSource:
    """Where a dataset comes from."""

    kind: str
    path: str = ""
    labels: str = ""
    blobs: SyntheticBlobConfig = field(default_factory=SyntheticBlobConfig)
    limit: int = 0


@dataclass(frozen=True)
class SplitConfig:
    """How a dataset is divided into train, query and gallery."""

    policy: str = POLICY_IDENTITY_DISJOINT
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    query_fraction: float = DEFAULT_QUERY_FRACTION


@dataclass(frozen=True)
class EvalRequest:
    """Feature x metric x re-ranking combinations to evaluate."""

    features: tuple[str, ...] = FEATURES
    metrics: tuple[str, ...] = METRICS
    rerank: str = RERANK_OFF
    k1: int = DEFAULT_K1
    k2: int = DEFAULT_K2
    lam: float = DEFAULT_LAMBDA
    max_rank: int = DEFAULT_MAX_RANK
    camera_filter: bool = True
    export_embeddings: bool = False

    def combinations(self) -> Iterator[tuple[str, str, bool]]:
        """Yield ``(feature, metric, rerank)`` in report order."""
        modes = {RERANK_OFF: (False,), RERANK_ON: (True,), RERANK_BOTH: (False, True)}
        yield from product(self.features, self.metrics, modes[self.rerank])


@dataclass(frozen=True)
class ExperimentManifest:
    """Everything that determines one run."""

    run_id: str
    output_dir: Path
    train: TrainConfig
    train_data: DataSource
    test_data: DataSource | None
    split: SplitConfig
    eval: EvalRequest
    options: dict[str, Any]

    @property
    def hash(self) -> str:
        """Return the manifest hash."""
        return manifest_hash(self.options)

    @property
    def run_dir(self) -> Path:
        """Return the directory holding this run's outputs."""
        return self.output_dir / self.run_id

    @property
    def cross_domain(self) -> bool:
        """Return True if the test data is a separate dataset."""
        return self.test_data is not None


def build_train_config(options: Mapping[str, Any]) -> TrainConfig:
    """Build the typed training config from validated options."""
    return TrainConfig(
        warmup=options[CONF_WARMUP],
        rea=options[CONF_REA],
        label_smooth=options[CONF_LABEL_SMOOTH],
        last_stride_1=options[CONF_LAST_STRIDE_1],
        neck=NeckVariant(options[CONF_NECK]),
        center_loss=options[CONF_CENTER_LOSS],
        schedule=ScheduleConfig(
            base_lr=options[CONF_BASE_LR],
            warmup_epochs=options[CONF_WARMUP_EPOCHS],
            decay_epochs=options[CONF_DECAY_EPOCHS],
            decay_factors=options[CONF_DECAY_FACTORS],
            total_epochs=options[CONF_TOTAL_EPOCHS],
            time_scale=options[CONF_TIME_SCALE],
        ),
        sampler=PKSamplerConfig(options[CONF_P], options[CONF_K]),
        erasing=REAConfig(
            p=options[CONF_REA_P],
            sl=options[CONF_REA_SL],
            sh=options[CONF_REA_SH],
            r1=options[CONF_REA_R1],
            fill=options[CONF_REA_FILL],
        ),
        epsilon=options[CONF_EPSILON],
        triplet=TripletConfig(options[CONF_MARGIN]),
        weights=LossWeights(options[CONF_BETA]),
        center_lr=options[CONF_CENTER_LR],
        center_mode=options[CONF_CENTER_MODE],
        weight_decay=options[CONF_WEIGHT_DECAY],
        blocks=options[CONF_BLOCKS],
        classifier_bias=options[CONF_CLASSIFIER_BIAS],
        bn_bias_trainable=options[CONF_BN_BIAS_TRAINABLE],
        iters_per_epoch=options[CONF_ITERS_PER_EPOCH] or None,
        seed=options[CONF_SEED],
    )


def _blobs(options: Mapping[str, Any], seed_offset: int) -> SyntheticBlobConfig:
    return SyntheticBlobConfig(
        identities=options[CONF_BLOBS_IDENTITIES],
        samples=options[CONF_BLOBS_SAMPLES],
        size=options[CONF_BLOBS_SIZE],
        noise=options[CONF_BLOBS_NOISE],
        cameras=options[CONF_BLOBS_CAMERAS],
        seed=options[CONF_SEED] + seed_offset,
    )


def build_manifest(options: Mapping[str, Any]) -> ExperimentManifest:
    """Build the typed manifest from validated options."""
    options = dict(options)
    test_data = None
    if CONF_TEST_KIND in options:
        test_data = DataSource(
            options[CONF_TEST_KIND],
            options.get(CONF_TEST_PATH, ""),
            options.get(CONF_TEST_LABELS, ""),
            _blobs(options, 1),
            options[CONF_LIMIT],
        )
    elif CONF_TEST_PATH in options or CONF_TEST_LABELS in options:
        raise ConfigError("test data paths need a kind", CONF_TEST_KIND)
    return ExperimentManifest(
        run_id=options[CONF_RUN_ID],
        output_dir=Path(options[CONF_OUTPUT_DIR]),
        train=build_train_config(options),
        train_data=DataSource(
            options[CONF_TRAIN_KIND],
            options[CONF_TRAIN_PATH],
            options[CONF_TRAIN_LABELS],
            _blobs(options, 0),
            options[CONF_LIMIT],
        ),
        test_data=test_data,
        split=SplitConfig(
            options[CONF_SPLIT_POLICY], options[CONF_TRAIN_FRACTION], options[CONF_QUERY_FRACTION]
        ),
        eval=EvalRequest(
            features=options[CONF_EVAL_FEATURES],
            metrics=options[CONF_EVAL_METRICS],
            rerank=options[CONF_EVAL_RERANK],
            k1=options[CONF_EVAL_K1],
            k2=options[CONF_EVAL_K2],
            lam=options[CONF_EVAL_LAMBDA],
            max_rank=options[CONF_EVAL_MAX_RANK],
            camera_filter=options[CONF_EVAL_CAMERA_FILTER],
            export_embeddings=options[CONF_EVAL_EXPORT_EMBEDDINGS],
        ),
        options=options,
    )


def load_manifest(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: Iterable[tuple[str, Any]] = (),
) -> ExperimentManifest:
    """Read, layer, validate and build a manifest."""
    file_options: dict[str, str] = {}
    if path is not None:
        try:
            file_options = parse_manifest_text(Path(path).read_text())
        except OSError as err:
            raise ConfigError(f"cannot read manifest {path}: {err}") from err
    manifest = build_manifest(resolve_options(file_options, preset, overrides))
    _LOGGER.debug("Resolved manifest %s:\n%s", manifest.hash, render_options(manifest.options))
    return manifest

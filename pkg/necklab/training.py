"""Learning-rate schedule, training configuration and the training loop."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field, replace

import numpy as np

from .const import (
    CENTER_MODE_OPTIMIZER,
    CENTER_MODE_RULE,
    CONF_DECAY_EPOCHS,
    CONF_DECAY_FACTORS,
    CONF_ITERS_PER_EPOCH,
    CONF_TIME_SCALE,
    CONF_TOTAL_EPOCHS,
    CONF_WARMUP_EPOCHS,
    DEFAULT_BASE_LR,
    DEFAULT_BLOCKS,
    DEFAULT_CENTER_LR,
    DEFAULT_DECAY_EPOCHS,
    DEFAULT_DECAY_FACTORS,
    DEFAULT_EPSILON,
    DEFAULT_SEED,
    DEFAULT_TIME_SCALE,
    DEFAULT_TOTAL_EPOCHS,
    DEFAULT_WARMUP_EPOCHS,
    DEFAULT_WEIGHT_DECAY,
    TRAINING_LOG_COLUMNS,
)
from .data import IdentityDataset
from .exceptions import ConfigError, DataError, DivergenceError, LossError
from .losses import (
    CenterBank,
    LabelSmoothConfig,
    LossBreakdown,
    LossWeights,
    TripletConfig,
    batch_hard_triplet,
    center_loss,
    id_loss,
    total_loss,
    update_centers,
)
from .model import BackboneConfig, NeckModel, NeckVariant, Parameter
from .optim import Adam
from .sampler import BatchPipeline, PKSamplerConfig
from .tensor import Tensor
from .transforms import REAConfig

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleConfig:
    """Warmup then step-decay learning rate over integer epochs.

    With ``time_scale`` set every breakpoint is multiplied by it and
    rounded up; ``warmup=False`` keeps the base rate until the first decay.
    """

    base_lr: float = DEFAULT_BASE_LR
    warmup_epochs: float = DEFAULT_WARMUP_EPOCHS
    decay_epochs: tuple[float, ...] = DEFAULT_DECAY_EPOCHS
    decay_factors: tuple[float, ...] = DEFAULT_DECAY_FACTORS
    total_epochs: float = DEFAULT_TOTAL_EPOCHS
    time_scale: float = DEFAULT_TIME_SCALE
    warmup: bool = True

    def __post_init__(self) -> None:
        """Validate the breakpoints."""
        if self.time_scale <= 0:
            raise ConfigError(
                f"time scale must be positive, got {self.time_scale}", CONF_TIME_SCALE
            )
        if self.warmup_epochs < 0:
            raise ConfigError("warmup epochs must be non-negative", CONF_WARMUP_EPOCHS)
        if len(self.decay_epochs) != len(self.decay_factors):
            raise ConfigError(
                f"{len(self.decay_epochs)} decay epochs but {len(self.decay_factors)} factors",
                CONF_DECAY_FACTORS,
            )
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:], strict=False)):
            raise ConfigError("decay epochs must be strictly increasing", CONF_DECAY_EPOCHS)
        if self.total_epochs < 1:
            raise ConfigError("at least one epoch is required", CONF_TOTAL_EPOCHS)

    def scaled(self) -> ScheduleConfig:
        """Return the schedule with the time scale applied and breakpoints rounded up."""

        def up(value: float) -> int:
            return math.ceil(round(value * self.time_scale, 9))

        return replace(
            self,
            warmup_epochs=up(self.warmup_epochs),
            decay_epochs=tuple(up(epoch) for epoch in self.decay_epochs),
            total_epochs=max(1, up(self.total_epochs)),
            time_scale=1.0,
        )

    @property
    def epochs(self) -> int:
        """Return the number of epochs actually run."""
        return int(self.scaled().total_epochs)


def lr_at_epoch(t: int, cfg: ScheduleConfig) -> float:
    """Return the learning rate of epoch ``t`` (1-based)."""
    schedule = cfg.scaled()
    if not 1 <= t <= schedule.total_epochs:
        raise ConfigError(
            f"epoch {t} outside 1..{schedule.total_epochs}", CONF_TOTAL_EPOCHS
        )
    if schedule.warmup and t <= schedule.warmup_epochs:
        lr = schedule.base_lr * t / schedule.warmup_epochs
    else:
        lr = schedule.base_lr
        for epoch, factor in zip(schedule.decay_epochs, schedule.decay_factors, strict=True):
            if t > epoch:
                lr *= factor
    # Round off the float products so 3.5e-4 * 0.1 is 3.5e-5 exactly
    return float(f"{lr:.15g}")


@dataclass(frozen=True)
class TrainConfig:
    """Trick toggles and every hyperparameter of one training run."""

    warmup: bool = False
    rea: bool = False
    label_smooth: bool = False
    last_stride_1: bool = False
    neck: NeckVariant = NeckVariant.NECK3
    center_loss: bool = False
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: PKSamplerConfig = field(default_factory=PKSamplerConfig)
    erasing: REAConfig = field(default_factory=REAConfig)
    epsilon: float = DEFAULT_EPSILON
    triplet: TripletConfig = field(default_factory=TripletConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    center_lr: float = DEFAULT_CENTER_LR
    center_mode: str = CENTER_MODE_RULE
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    blocks: tuple[int, ...] = DEFAULT_BLOCKS
    classifier_bias: bool = False
    bn_bias_trainable: bool = True
    iters_per_epoch: int | None = None
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        """Validate fields not covered by the nested configs."""
        if self.iters_per_epoch is not None and self.iters_per_epoch < 1:
            raise ConfigError("iterations per epoch must be positive", CONF_ITERS_PER_EPOCH)

    @property
    def effective_schedule(self) -> ScheduleConfig:
        """Return the schedule with the warmup toggle applied."""
        return replace(self.schedule, warmup=self.warmup)

    def backbone(self, input_shape: tuple[int, int, int]) -> BackboneConfig:
        """Return the backbone layout for images of ``input_shape``."""
        return BackboneConfig(input_shape, self.blocks, 1 if self.last_stride_1 else 2)


@dataclass(frozen=True)
class TrainingRecord:
    """Learning rate and loss values of one iteration."""

    iteration: int
    epoch: int
    lr: float
    l_id: float
    l_tri: float
    l_c: float
    total: float

    def as_row(self) -> tuple[int, int, float, float, float, float, float]:
        """Return the values in log column order."""
        return (self.iteration, self.epoch, self.lr, self.l_id, self.l_tri, self.l_c, self.total)


@dataclass
class TrainingLog:
    """One record per iteration, in order."""

    records: list[TrainingRecord] = field(default_factory=list)

    columns = TRAINING_LOG_COLUMNS

    def __len__(self) -> int:
        """Return the number of iterations logged."""
        return len(self.records)

    def __iter__(self) -> Iterator[TrainingRecord]:
        """Iterate over the records."""
        return iter(self.records)

    def append(self, record: TrainingRecord) -> None:
        """Add the next record; iterations must be contiguous."""
        expected = len(self.records)
        if record.iteration != expected:
            raise ValueError(f"expected iteration {expected}, got {record.iteration}")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        """Return one log column as an array."""
        index = self.columns.index(name)
        return np.array([record.as_row()[index] for record in self.records])

    def inconsistency_rate(self) -> float:
        """Return the fraction of steps where L_ID and L_Tri move in opposite directions."""
        if len(self.records) < 2:
            return 0.0
        id_moves = np.sign(np.diff(self.column("L_ID")))
        tri_moves = np.sign(np.diff(self.column("L_Tri")))
        return float(np.mean(id_moves * tri_moves < 0))


@dataclass(eq=False)
class TrainingResult:
    """Everything a finished run produces."""

    model: NeckModel
    log: TrainingLog
    label_map: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    centers: CenterBank | None = None


class Trainer:
    """Owns the model, optimizer and center bank of one run."""

    def __init__(self, dataset: IdentityDataset, cfg: TrainConfig) -> None:
        """Prepare normalized data, model, optimizer and batch pipeline."""
        train_set, self.label_map = dataset.relabeled()
        if len(train_set) == 0:
            raise DataError("training split is empty")
        self.cfg = cfg
        self.norm_mean, self.norm_std = train_set.channel_stats()
        train_set = train_set.normalized(self.norm_mean, self.norm_std)
        num_classes = self.label_map.size

        self.model = NeckModel(
            cfg.backbone(train_set.image_shape),
            cfg.neck,
            num_classes,
            seed=cfg.seed,
            classifier_bias=cfg.classifier_bias,
            bn_bias_trainable=cfg.bn_bias_trainable,
        )
        self.description = self.model.description
        self.centers = (
            CenterBank.create(
                num_classes, self.model.config.feature_dim, cfg.center_lr, cfg.center_mode
            )
            if cfg.center_loss
            else None
        )
        params = self.model.parameters()
        if self.centers is not None and self.centers.mode == CENTER_MODE_OPTIMIZER:
            params.append(Parameter("centers", self.centers.centers, False))
        self.optimizer = Adam(params, weight_decay=cfg.weight_decay)

        self.smoothing = LabelSmoothConfig(num_classes, cfg.epsilon if cfg.label_smooth else 0.0)
        self.pipeline = BatchPipeline(
            train_set.images,
            train_set.labels,
            train_set.identity_index,
            cfg.sampler,
            cfg.erasing if cfg.rea else None,
            cfg.seed,
        )
        self.schedule = cfg.effective_schedule
        self.iters_per_epoch = cfg.iters_per_epoch or max(
            1, len(train_set) // cfg.sampler.batch_size
        )
        self.log = TrainingLog()
        _LOGGER.info(
            "Training %s on %d samples of %d identities: %d epochs x %d iterations",
            self.model.variant.value,
            len(train_set),
            num_classes,
            self.schedule.epochs,
            self.iters_per_epoch,
        )

    def losses(
        self, images: np.ndarray, labels: np.ndarray
    ) -> tuple[Tensor, LossBreakdown, Tensor]:
        """Run one forward pass and attach the losses of the neck variant.

        Returns:
            total loss, its breakdown, and f_t for the center update
        """
        output = self.model.forward(Tensor(images), mode="train")
        l_id = (
            id_loss(output.logits, labels, self.smoothing)
            if self.description.id_feature is not None
            else None
        )
        l_tri = (
            batch_hard_triplet(
                output.feature(self.description.tri_feature), labels, self.cfg.triplet
            )
            if self.description.tri_feature is not None
            else None
        )
        l_c = center_loss(output.f_t, labels, self.centers) if self.centers is not None else None
        total, breakdown = total_loss(l_id, l_tri, l_c, self.cfg.weights)
        return total, breakdown, output.f_t

    def step(self, iteration: int, epoch: int, lr: float) -> TrainingRecord:
        """Run one optimization step."""
        images, labels = self.pipeline.batch(iteration)
        try:
            total, breakdown, f_t = self.losses(images, labels)
        except LossError as err:
            _LOGGER.error("Aborting at iteration %d: %s", iteration, err)
            raise DivergenceError(iteration, {}) from err
        if not breakdown.finite:
            _LOGGER.error("Aborting at iteration %d: losses %s", iteration, breakdown.as_dict())
            raise DivergenceError(iteration, breakdown.as_dict())

        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step(lr)
        if self.centers is not None and self.centers.mode == CENTER_MODE_RULE:
            update_centers(self.centers, f_t.data, labels)

        record = TrainingRecord(
            iteration,
            epoch,
            lr,
            breakdown.l_id,
            breakdown.l_tri,
            breakdown.l_c,
            breakdown.total,
        )
        _LOGGER.debug("Iteration %d: %s", iteration, breakdown.as_dict())
        return record

    def run(self) -> TrainingResult:
        """Train for every epoch of the schedule."""
        iteration = 0
        for epoch in range(1, self.schedule.epochs + 1):
            lr = lr_at_epoch(epoch, self.schedule)
            for _ in range(self.iters_per_epoch):
                self.log.append(self.step(iteration, epoch, lr))
                iteration += 1
            _LOGGER.info(
                "Epoch %d/%d lr=%.3e total=%.4f",
                epoch,
                self.schedule.epochs,
                lr,
                self.log.records[-1].total,
            )
        return TrainingResult(
            self.model, self.log, self.label_map, self.norm_mean, self.norm_std, self.centers
        )


def train(dataset: IdentityDataset, cfg: TrainConfig) -> TrainingResult:
    """Train a model on the identities of ``dataset``."""
    return Trainer(dataset, cfg).run()

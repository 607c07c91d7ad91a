"""Plain convolutional backbone, neck structures and classifier head."""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field, replace

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:  # pragma: no cover - Python 3.10 fallback matching enum.StrEnum
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str.__str__(self)

        def __format__(self, format_spec: str) -> str:
            return str.__format__(str(self), format_spec)

import numpy as np

from . import tensor as T
from .const import (
    CONF_BLOCKS,
    CONF_LAST_STRIDE_1,
    DEFAULT_BLOCKS,
    DEFAULT_EXTRACT_BATCH,
    DEFAULT_LAST_STRIDE,
    FEATURE_I,
    FEATURE_T,
    STREAM_INIT,
)
from .exceptions import ConfigError, NeckError, ShapeError
from .tensor import BNState, Mode, Tensor

_LOGGER = logging.getLogger(__name__)


class NeckVariant(StrEnum):
    """Neck structures between the pooled feature and the losses."""

    NECK1 = "neck1"
    NECK2 = "neck2"
    NECK3 = "neck3"
    BNNECK1 = "bnneck1"
    BNNECK2 = "bnneck2"
    BNNECK3 = "bnneck3"
    BNNECK = "bnneck"


@dataclass(frozen=True)
class NeckDescription:
    """Describes which feature each loss attaches to for one neck."""

    key: NeckVariant
    uses_bn: bool
    id_feature: str | None
    tri_feature: str | None
    inference_features: tuple[str, ...]

    @property
    def has_classifier(self) -> bool:
        """Return True if the neck produces logits."""
        return self.id_feature is not None


NECK_DESCRIPTIONS: dict[NeckVariant, NeckDescription] = {
    description.key: description
    for description in (
        NeckDescription(NeckVariant.NECK1, False, FEATURE_T, None, (FEATURE_T,)),
        NeckDescription(NeckVariant.NECK2, False, None, FEATURE_T, (FEATURE_T,)),
        NeckDescription(NeckVariant.NECK3, False, FEATURE_T, FEATURE_T, (FEATURE_T,)),
        NeckDescription(NeckVariant.BNNECK1, True, FEATURE_I, None, (FEATURE_I,)),
        NeckDescription(NeckVariant.BNNECK2, True, None, FEATURE_I, (FEATURE_I,)),
        NeckDescription(NeckVariant.BNNECK3, True, FEATURE_I, FEATURE_I, (FEATURE_I,)),
        NeckDescription(NeckVariant.BNNECK, True, FEATURE_I, FEATURE_T, (FEATURE_T, FEATURE_I)),
    )
}


@dataclass(frozen=True)
class BackboneConfig:
    """Backbone layout.

    Every block is a bias-free 3x3 convolution followed by ReLU. All blocks but
    the last halve the map with 2x2 max pooling; the last block downsamples
    with its convolution stride (the last stride). The pooled feature has as
    many dimensions as the last block has channels.
    """

    input_shape: tuple[int, int, int]
    blocks: tuple[int, ...] = DEFAULT_BLOCKS
    last_stride: int = DEFAULT_LAST_STRIDE

    def __post_init__(self) -> None:
        """Validate the layout."""
        if self.last_stride not in (1, 2):
            raise ConfigError(
                f"last stride must be 1 or 2, got {self.last_stride}", CONF_LAST_STRIDE_1
            )
        if len(self.input_shape) != 3 or any(extent < 1 for extent in self.input_shape):
            raise ConfigError(f"input shape must be (C, H, W), got {self.input_shape}")
        if any(channels < 1 for channels in self.blocks):
            raise ConfigError(f"block channels must be positive, got {self.blocks}", CONF_BLOCKS)
        height, width = self.output_hw
        if height < 1 or width < 1:
            raise ConfigError(
                f"{len(self.blocks)} blocks shrink {self.input_shape[1:]} below 1x1", CONF_BLOCKS
            )

    @property
    def feature_dim(self) -> int:
        """Return the pooled feature length."""
        return self.blocks[-1] if self.blocks else self.input_shape[0]

    @property
    def output_hw(self) -> tuple[int, int]:
        """Return the spatial size of the last feature map."""
        height, width = self.input_shape[1:]
        for index in range(len(self.blocks)):
            if index < len(self.blocks) - 1:
                height, width = height // 2, width // 2
            else:
                height = (height - 1) // self.last_stride + 1
                width = (width - 1) // self.last_stride + 1
        return height, width

    def with_feature_dim(self, feature_dim: int) -> BackboneConfig:
        """Return the same layout with the last block resized."""
        if not self.blocks:
            raise ConfigError("a zero-block backbone has no feature dimension to set", CONF_BLOCKS)
        return replace(self, blocks=(*self.blocks[:-1], feature_dim))

    def conv_shapes(self) -> list[tuple[int, int, int, int]]:
        """Return the kernel shape of every block."""
        shapes = []
        in_channels = self.input_shape[0]
        for out_channels in self.blocks:
            shapes.append((out_channels, in_channels, 3, 3))
            in_channels = out_channels
        return shapes


@dataclass(frozen=True)
class Parameter:
    """A trainable tensor with its weight-decay policy."""

    name: str
    tensor: Tensor
    decay: bool


@dataclass(eq=False)
class ClassifierHead:
    """Linear identity classifier; weight is ``feature_dim x N``."""

    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def create(
        cls, feature_dim: int, num_classes: int, rng: np.random.Generator, bias: bool = False
    ) -> ClassifierHead:
        """Create a head with Kaiming-normal (fan-in) weights."""
        std = np.sqrt(2.0 / feature_dim)
        weight = Tensor(
            rng.standard_normal((feature_dim, num_classes)) * std,
            requires_grad=True,
            name="classifier.weight",
        )
        bias_tensor = (
            Tensor(np.zeros(num_classes), requires_grad=True, name="classifier.bias")
            if bias
            else None
        )
        return cls(weight, bias_tensor)

    @property
    def num_classes(self) -> int:
        """Return N, the number of training identities."""
        return self.weight.shape[1]

    def __call__(self, features: Tensor) -> Tensor:
        """Return per-class scores."""
        logits = T.matmul(features, self.weight)
        return T.add(logits, self.bias) if self.bias is not None else logits


@dataclass(frozen=True)
class NeckOutput:
    """Features and scores produced by one forward pass.

    ``f_t`` is the pooled feature, ``f_i`` the feature after the neck's BN
    layer (the same tensor for BN-free necks).
    """

    variant: NeckVariant
    f_t: Tensor
    f_i: Tensor
    scores: Tensor | None = field(default=None, repr=False)

    @property
    def has_logits(self) -> bool:
        """Return True if the neck carries a classifier."""
        return self.scores is not None

    @property
    def logits(self) -> Tensor:
        """Return the classifier scores."""
        if self.scores is None:
            raise NeckError(f"{self.variant.value} has no classifier, so it produces no logits")
        return self.scores

    def feature(self, name: str) -> Tensor:
        """Return f_t or f_i by name."""
        if name == FEATURE_T:
            return self.f_t
        if name == FEATURE_I:
            return self.f_i
        raise NeckError(f"unknown feature {name!r}")


def _kaiming_conv(shape: tuple[int, int, int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in = shape[1] * shape[2] * shape[3]
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class NeckModel:
    """Backbone plus one neck variant and its optional classifier."""

    def __init__(
        self,
        config: BackboneConfig,
        variant: NeckVariant,
        num_classes: int,
        seed: int = 0,
        classifier_bias: bool = False,
        bn_bias_trainable: bool = True,
    ) -> None:
        """Initialize weights deterministically from ``seed``."""
        self.config = config
        self.variant = NeckVariant(variant)
        self.description = NECK_DESCRIPTIONS[self.variant]
        self.num_classes = num_classes
        rng = np.random.default_rng([seed, STREAM_INIT])

        self.conv_weights = [
            Tensor(_kaiming_conv(shape, rng), requires_grad=True, name=f"backbone.{index}.weight")
            for index, shape in enumerate(config.conv_shapes())
        ]
        self.bn: BNState | None = (
            BNState.create(config.feature_dim, bias_trainable=bn_bias_trainable)
            if self.description.uses_bn
            else None
        )
        self.head: ClassifierHead | None = (
            ClassifierHead.create(config.feature_dim, num_classes, rng, bias=classifier_bias)
            if self.description.has_classifier
            else None
        )
        _LOGGER.debug(
            "Built %s model: blocks=%s last_stride=%d feature_dim=%d classes=%d params=%d",
            self.variant.value,
            config.blocks,
            config.last_stride,
            config.feature_dim,
            num_classes,
            self.count_params(),
        )

    def backbone(self, images: Tensor) -> Tensor:
        """Return the pooled feature f_t for ``(N, C, H, W)`` images."""
        if images.ndim != 4 or images.shape[1:] != self.config.input_shape:
            raise ShapeError("forward", images.shape, (-1, *self.config.input_shape))
        x = images
        last = len(self.conv_weights) - 1
        for index, weight in enumerate(self.conv_weights):
            stride = self.config.last_stride if index == last else 1
            x = T.relu(T.conv2d(x, weight, stride=stride, padding=1))
            if index < last:
                x = T.max_pool2d(x, 2)
        return T.global_avg_pool(x)

    def forward(self, images: Tensor, mode: Mode = "train") -> NeckOutput:
        """Run backbone, neck and classifier."""
        f_t = self.backbone(images)
        f_i = T.batch_norm(f_t, self.bn, mode) if self.bn is not None else f_t
        scores = None
        if self.head is not None:
            scores = self.head(f_i if self.description.id_feature == FEATURE_I else f_t)
        return NeckOutput(self.variant, f_t, f_i, scores)

    __call__ = forward

    def extract(
        self,
        images: np.ndarray,
        feature: str = FEATURE_I,
        batch_size: int = DEFAULT_EXTRACT_BATCH,
    ) -> np.ndarray:
        """Return eval-mode features for a stack of images."""
        chunks = [
            self.forward(Tensor(images[start : start + batch_size]), mode="eval")
            .feature(feature)
            .numpy()
            for start in range(0, len(images), batch_size)
        ]
        if not chunks:
            return np.zeros((0, self.config.feature_dim))
        return np.concatenate(chunks, axis=0)

    def parameters(self) -> list[Parameter]:
        """Return the trainable tensors; BN parameters are not decayed."""
        params = [Parameter(weight.name, weight, True) for weight in self.conv_weights]
        if self.bn is not None:
            params.append(Parameter("bn.gamma", self.bn.gamma, False))
            if self.bn.beta.requires_grad:
                params.append(Parameter("bn.beta", self.bn.beta, False))
        if self.head is not None:
            params.append(Parameter("classifier.weight", self.head.weight, True))
            if self.head.bias is not None:
                params.append(Parameter("classifier.bias", self.head.bias, False))
        return params

    def count_params(self) -> int:
        """Return the number of learned scalars."""
        return count_params(
            self.config,
            self.variant,
            self.num_classes,
            classifier_bias=self.head is not None and self.head.bias is not None,
            bn_bias_trainable=self.bn is None or self.bn.beta.requires_grad,
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        """Return copies of every weight and running statistic."""
        state = {weight.name: weight.numpy() for weight in self.conv_weights}
        if self.bn is not None:
            state["bn.gamma"] = self.bn.gamma.numpy()
            state["bn.beta"] = self.bn.beta.numpy()
            state["bn.running_mean"] = self.bn.running_mean.copy()
            state["bn.running_var"] = self.bn.running_var.copy()
        if self.head is not None:
            state["classifier.weight"] = self.head.weight.numpy()
            if self.head.bias is not None:
                state["classifier.bias"] = self.head.bias.numpy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Overwrite weights and running statistics."""
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        if missing:
            raise ShapeError("load_state_dict", detail=f"missing entries {missing}")
        for key, current in expected.items():
            if np.shape(state[key]) != current.shape:
                raise ShapeError("load_state_dict", np.shape(state[key]), current.shape, detail=key)
        for weight in self.conv_weights:
            weight.data = np.array(state[weight.name], dtype=np.float64)
        if self.bn is not None:
            self.bn.gamma.data = np.array(state["bn.gamma"], dtype=np.float64)
            self.bn.beta.data = np.array(state["bn.beta"], dtype=np.float64)
            self.bn.running_mean = np.array(state["bn.running_mean"], dtype=np.float64)
            self.bn.running_var = np.array(state["bn.running_var"], dtype=np.float64)
        if self.head is not None:
            self.head.weight.data = np.array(state["classifier.weight"], dtype=np.float64)
            if self.head.bias is not None:
                self.head.bias.data = np.array(state["classifier.bias"], dtype=np.float64)


def count_params(
    config: BackboneConfig,
    variant: NeckVariant = NeckVariant.NECK3,
    num_classes: int = 0,
    classifier_bias: bool = False,
    bn_bias_trainable: bool = True,
) -> int:
    """Count learned scalars; the last stride never changes the count."""
    description = NECK_DESCRIPTIONS[NeckVariant(variant)]
    total = sum(int(np.prod(shape)) for shape in config.conv_shapes())
    if description.uses_bn:
        total += (2 if bn_bias_trainable else 1) * config.feature_dim
    if description.has_classifier:
        total += config.feature_dim * num_classes
        if classifier_bias:
            total += num_classes
    return total

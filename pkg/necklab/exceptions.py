"""Exceptions raised by necklab."""

from __future__ import annotations

from .const import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_ERROR


class NecklabError(Exception):
    """Base class for necklab errors."""

    exit_code: int = EXIT_ERROR


class ShapeError(NecklabError, ValueError):
    """Tensor operands have incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = "") -> None:
        """Initialize the error with the shapes that disagree."""
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(shape)) for shape in shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class GradientError(NecklabError):
    """Backward pass requested on something that is not a scalar loss."""


class NeckError(NecklabError):
    """Requested output does not exist for the selected neck variant."""


class ConfigError(NecklabError):
    """Configuration value is missing or invalid."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, key: str | None = None) -> None:
        """Initialize the error, remembering the offending key."""
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DataError(NecklabError):
    """Dataset files or dataset composition are unusable."""

    exit_code = EXIT_DATA


class IdxFormatError(DataError):
    """IDX file is malformed."""


class EvaluationError(NecklabError, ValueError):
    """Retrieval evaluation inputs are invalid."""


class DivergenceError(NecklabError):
    """Training produced a non-finite loss."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, iteration: int, losses: dict[str, float]) -> None:
        """Initialize the error with the offending iteration."""
        self.iteration = iteration
        self.losses = losses
        super().__init__(f"Non-finite loss at iteration {iteration}: {losses}")


class LossError(NecklabError, ValueError):
    """Loss inputs cannot produce a finite loss."""

"""Custom exceptions for trans2unet package."""

from typing import Optional


class Trans2UnetError(Exception):
    """Base exception for trans2unet package."""

    pass


class ValidationError(Trans2UnetError):
    """Input validation failed.

    Raised when user input or configuration doesn't meet requirements.
    """

    pass


class ConfigValidationError(ValidationError):
    """Configuration key is missing, unknown or has an invalid value.

    Raised while parsing or validating a run configuration.
    """

    def __init__(self, key: str, message: str) -> None:
        """Initialize ConfigValidationError.

        Args:
            key: Dotted configuration key (e.g. "vit.layers")
            message: Error message
        """
        self.key = key
        self.message = message
        super().__init__(f"Config key '{key}': {message}")


class ShapeError(Trans2UnetError, ValueError):
    """Tensor shapes are incompatible with an operation.

    Raised by every tensor operation whose shape rule is violated.
    """

    pass


class DatasetError(Trans2UnetError):
    """Dataset ingestion or splitting failed.

    Raised for missing masks, unreadable files, dimension mismatches
    and empty datasets or splits.
    """

    pass


class CheckpointError(Trans2UnetError):
    """Checkpoint file is corrupt or does not match the model.

    Raised on magic/version mismatch, truncated files and tensor
    name or shape mismatches.
    """

    pass


class NumericalError(Trans2UnetError):
    """Non-finite value met during training.

    Raised when a loss or gradient becomes NaN or infinite.
    """

    def __init__(self, message: str, parameter: Optional[str] = None) -> None:
        """Initialize NumericalError.

        Args:
            message: Error message
            parameter: Name of the offending parameter, if any
        """
        self.parameter = parameter
        super().__init__(message)


class GradientCheckError(Trans2UnetError):
    """Analytic and numerical gradients disagree beyond tolerance."""

    pass

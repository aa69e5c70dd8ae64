"""Exception types shared across the pipeline."""


class OwsegError(Exception):
    """Base class for every error raised by this package."""


class FormatError(OwsegError):
    """Malformed, truncated or wrongly-tagged tensor file."""


class SizeError(OwsegError):
    """Tensor shape is empty, non-positive or too large for the format."""


class NotFoundError(OwsegError):
    """A required dataset file is missing."""


class ShapeError(OwsegError):
    """Arrays that must be aligned are not."""


class ValidationError(OwsegError):
    """Data violates a documented invariant."""


class NumericError(OwsegError):
    """Non-finite values where finite ones are required."""


class ConfigError(OwsegError):
    """Parameter outside its documented range."""


class SchemaError(OwsegError):
    """Feature names or vector lengths do not match."""


class DataError(OwsegError):
    """Not enough data to fit a model."""


class PreconditionError(OwsegError):
    """Caller violated an operation precondition."""


class StageMissingError(OwsegError):
    """A pipeline stage output is required but absent."""

    def __init__(self, stage: str):
        super().__init__(f"missing output of stage '{stage}'")
        self.stage = stage


class NotIncluded(OwsegError):
    """Signal: image contains no clustered novel segment and is skipped."""


class SkipBatch(OwsegError):
    """Signal: batch contains no trainable pixel and is skipped."""

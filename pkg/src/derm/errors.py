"""Exception types shared across the package."""


class DermError(Exception):
    """Base class for all package errors."""


class ShapeError(DermError):
    """Array shapes or ranks are inconsistent with an operation's contract."""


class ValidationError(DermError):
    """An input value violates a documented precondition."""


class MetadataParseError(DermError):
    """A metadata CSV row could not be parsed; message carries the row number."""


class ImputationError(DermError):
    """Age imputation is impossible (no observed ages to average)."""


class SplitError(DermError):
    """The requested validation split cannot be constructed."""


class RebalanceError(DermError):
    """Class rebalancing was asked to synthesize images for an empty class."""


class WeightFileError(DermError):
    """Base class for weight-file load failures."""


class WeightFormatError(WeightFileError):
    """Bad magic, unsupported version, or malformed header."""


class WeightShapeError(WeightFileError):
    """A stored tensor's shape disagrees with the model configuration."""


class MissingWeightError(WeightFileError):
    """The file lacks a tensor the model requires; message names it."""


class TruncatedPayloadError(WeightFileError):
    """The payload section is shorter than the header promises."""

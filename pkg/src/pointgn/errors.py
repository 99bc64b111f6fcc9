"""Exception hierarchy shared by the library and the CLI."""


class PointGNError(Exception):
    """Base class for all errors raised by pointgn."""


class InvalidInputError(PointGNError, ValueError):
    """Data handed to an operation violates its preconditions (e.g. NaN coordinates)."""


class InvalidArgumentError(PointGNError, ValueError):
    """A count, index or hyperparameter is out of range."""


class IngestionError(PointGNError):
    """A dataset archive or input file is missing or malformed."""


class BankFormatError(PointGNError):
    """A feature bank file cannot be parsed."""


class ConfigMismatchError(PointGNError):
    """A bank was built under a different encoder configuration."""

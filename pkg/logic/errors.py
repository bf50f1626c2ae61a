"""Exception types raised by the estimation library."""


class MggdError(ValueError):
    """Base class for every error raised by the library."""


class NotSymmetric(MggdError):
    pass


class NotPositiveDefinite(MggdError):
    pass


class DimensionMismatch(MggdError):
    pass


class InvalidRho(MggdError):
    pass


class NonPositiveArgument(MggdError):
    pass


class DegenerateData(MggdError):
    """Data that makes the likelihood or the fixed-point map undefined."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class ZeroDerivative(MggdError):
    pass


class NotConverged(MggdError):
    pass


class EmptyTrace(MggdError):
    pass


class ConfigError(MggdError):
    """Invalid experiment configuration; `path` locates the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class DatasetFormatError(MggdError):
    pass

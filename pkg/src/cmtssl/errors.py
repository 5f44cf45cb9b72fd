"""Exception types raised across the package."""


class CMTSSLError(Exception):
    """Base class for all package errors."""


class FormatError(CMTSSLError, ValueError):
    """A file does not match its declared on-disk format."""


class DataError(CMTSSLError, ValueError):
    """Input values violate a data invariant (non-finite, bad labels, ...)."""


class ShapeError(CMTSSLError, ValueError):
    pass


class ConfigurationError(CMTSSLError, ValueError):
    pass


class DegenerateInputError(CMTSSLError, ValueError):
    """Statistic undefined for the input (zero variance, empty mask, ...)."""


class DivergenceError(CMTSSLError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint

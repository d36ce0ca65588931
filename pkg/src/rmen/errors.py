"""Exception types shared across the package."""


class RmenError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RmenError):
    """Tensor or array dimensions do not match an operation's contract."""


class NumericError(RmenError):
    """A computation produced NaN or Inf values."""


class FormatError(RmenError):
    """A binary or text file does not conform to its on-disk format."""


class InsufficientDataError(RmenError):
    """Not enough input data to run an operation (short trace, too few peaks)."""


class DegenerateDataError(RmenError):
    """Input data has no usable structure (e.g. all frames identical)."""


class ConfigError(RmenError):
    """A configuration value or combination of values is invalid."""

"""Exception hierarchy shared by every qrvos module."""


class QrvosError(Exception):
    """Base class for all library errors."""


class DimensionError(QrvosError, ValueError):
    """Tensor shapes or extents are incompatible with an operation."""


class ConfigError(QrvosError, ValueError):
    """A configuration value is invalid."""


class DataError(QrvosError, ValueError):
    """Input data (tokens, manifests, sample ids) is malformed or inconsistent."""


class NumericError(QrvosError, ArithmeticError):
    """Non-finite values were encountered where finite ones are required."""


class UsageError(QrvosError, RuntimeError):
    """An API was called in a way its contract forbids."""


class LoadError(QrvosError, IOError):
    """A checkpoint cannot be read or does not match the requested model."""

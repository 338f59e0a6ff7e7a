"""Exception hierarchy for hytemp."""


class HytempError(Exception):
    """Base class for all errors raised by hytemp."""


class InputError(HytempError, ValueError):
    """Malformed, misaligned or out-of-range input data or arguments."""


class NumericalError(HytempError, ArithmeticError):
    """A simulation or training run produced non-finite values."""


class UsageError(HytempError, RuntimeError):
    """An operation was called on an object in the wrong state."""


class ConfigError(HytempError, ValueError):
    """An experiment configuration is invalid."""


class OutputError(HytempError, OSError):
    """An output location cannot be written."""

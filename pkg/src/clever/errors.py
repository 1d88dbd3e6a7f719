"""Exception hierarchy shared by every subsystem."""


class CleverError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CleverError, ValueError):
    pass


class NumericError(CleverError, ArithmeticError):
    pass


class ContractError(CleverError, ValueError):
    """A precondition of an operation was violated by the caller."""


class UnsupportedOp(CleverError, KeyError):
    pass


class InputError(CleverError, ValueError):
    pass


class ConfigError(CleverError, ValueError):
    pass


class FormatError(CleverError, ValueError):
    """Malformed on-disk data (checkpoint, dataset cache, IDX, PPM, CSV)."""

class BDLError(Exception):
    """Base class for errors raised by megbdl."""

    exit_code = 1


class ConfigurationError(BDLError, ValueError):
    exit_code = 2


class DimensionError(ConfigurationError):
    pass


class NumericalError(BDLError, ArithmeticError):
    exit_code = 3


class SilentSourceError(BDLError):
    """The simulated activation produces a (numerically) zero field."""

    exit_code = 3


class PartialFailureAbort(BDLError):
    exit_code = 4

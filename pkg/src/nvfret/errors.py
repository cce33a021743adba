"""Exception types. Each carries the CLI exit code it maps to."""


class NvFretError(Exception):
    exit_code = 1


class ConfigError(NvFretError, ValueError):
    """Bad configuration or command usage."""

    exit_code = 2


class PreconditionError(NvFretError, ValueError):
    """Inputs violate an operation's precondition."""

    exit_code = 2


class DomainError(PreconditionError):
    """Argument outside the mathematical domain (e.g. z <= 0)."""


class RangeError(PreconditionError):
    """Value outside an admissible interval (carries the interval)."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class GatingError(PreconditionError):
    """Gating removed every bin or found no usable peak."""


class DataFormatError(NvFretError, ValueError):
    exit_code = 3


class NumericalError(NvFretError, RuntimeError):
    """Quadrature/fit/curve construction failed numerically."""

    exit_code = 4

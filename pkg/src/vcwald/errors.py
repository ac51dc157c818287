"""Exception hierarchy; the CLI maps these onto exit codes."""


class VcwaldError(Exception):
    """Base class for package errors."""


class ConfigError(VcwaldError, ValueError):
    """Invalid configuration or experiment plan."""


class DataError(VcwaldError, ValueError):
    """Inconsistent or malformed input data."""


class NumericalError(VcwaldError, ArithmeticError):
    """A matrix that must be inverted is singular or too ill-conditioned."""

    def __init__(self, message, *, condition=None, eigenvalue=None, stage=None):
        super().__init__(message)
        self.condition = condition
        self.eigenvalue = eigenvalue
        self.stage = stage

"""Exception types raised across the package."""


class SQGError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(SQGError, ValueError):
    pass


class InvalidStateError(SQGError, RuntimeError):
    pass


class NumericalError(SQGError, ArithmeticError):
    """A linear or nonlinear solve failed.

    ``residual`` and ``iterations`` are filled in when known.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(SQGError, ValueError):
    pass

"""Exception hierarchy shared by every module.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class ParawaveError(Exception):
    pass


class ConfigError(ParawaveError, ValueError):
    """Invalid configuration or usage."""


class ContractError(ParawaveError, ValueError):
    """A function precondition was violated by its caller."""


class DimensionError(ContractError):
    """Tensor shapes do not line up."""


class NumericError(ParawaveError, FloatingPointError):
    """A value became non-finite (or underflowed) where that is not allowed."""

    def __init__(self, message, *, step=None, index=None):
        super().__init__(message)
        self.step = step
        self.index = index

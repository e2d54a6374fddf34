"""Exception hierarchy shared across the package."""


class RomdaError(Exception):
    """Base class for all package errors."""


class ShapeError(RomdaError, ValueError):
    """Operands have incompatible dimensions."""


class NumericError(RomdaError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ContractError(RomdaError, ValueError):
    """A caller violated a documented precondition."""


class ConditionError(NumericError):
    """A linear system is too ill-conditioned to solve reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConfigError(RomdaError, ValueError):
    """Invalid pipeline configuration; ``path`` is the dotted field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path

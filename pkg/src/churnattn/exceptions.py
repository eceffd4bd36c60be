"""Exception types shared across the package."""


class ChurnAttnError(Exception):
    """Base class for errors raised by this package."""


class ShapeMismatchError(ChurnAttnError, ValueError):
    """Operands have incompatible shapes."""


class NumericError(ChurnAttnError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class GraphError(ChurnAttnError, RuntimeError):
    """Gradient-graph contract violation (non-scalar backward, missing grads, ...)."""


class DataValidationError(ChurnAttnError, ValueError):
    """Input table fails schema or domain validation."""


class DegenerateDataError(ChurnAttnError, ValueError):
    """Statistic undefined for the given data (zero variance, single class, ...)."""


class TrainingDivergedError(ChurnAttnError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")

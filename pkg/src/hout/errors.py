"""Exception hierarchy shared by the numerical modules."""


class HoutError(Exception):
    """Base class. ``operation`` names the routine that failed (used by the CLI)."""

    operation = "hout"

    def __init__(self, message, operation=None):
        super().__init__(message)
        if operation is not None:
            self.operation = operation


class OrderRangeError(HoutError, ValueError):
    operation = "tensor_power"


class ShapeError(HoutError, ValueError):
    operation = "n_mode_product"


class DegenerateInputError(HoutError, ValueError):
    operation = "hopm"


class DecompositionError(HoutError):
    """Raised by the rank-1 decomposition; carries the partial result."""

    operation = "approx_rank1_decompose"

    def __init__(self, message, partial=None, operation=None):
        super().__init__(message, operation)
        self.partial = partial


class BudgetExceededError(DecompositionError):
    pass


class StallError(DecompositionError):
    pass


class NotPositiveDefiniteError(HoutError, ValueError):
    operation = "sqrt_spd"


class ParameterError(HoutError, ValueError):
    operation = "hout_params"


class EvaluationError(HoutError, ValueError):
    operation = "propagate"

"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or Inf."""


class ParseError(ValueError):
    """A data file could not be parsed.

    ``lineno`` is 1-based, or None when the error is not tied to a line.
    """

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class EstimationError(ArithmeticError):
    """Channel estimation failed (singular pilot Gram matrix)."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_finite_epoch=None):
        self.last_finite_epoch = last_finite_epoch
        super().__init__(message)

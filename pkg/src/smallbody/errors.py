"""Exception hierarchy.

``ValidationError`` covers bad inputs (CLI exit code 1); everything
deriving from ``NumericalError`` is a failure of a computation on valid
inputs (CLI exit code 2).
"""


class SmallBodyError(Exception):
    pass


class ValidationError(SmallBodyError, ValueError):
    pass


class PreconditionError(ValidationError):
    """An operation was called outside the regime where it is valid."""


class NumericalError(SmallBodyError, ArithmeticError):
    pass


class SingularityError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class DegeneratePotentialError(NumericalError):
    pass


class BodyNotSmallError(NumericalError):
    pass


class ResonanceError(NumericalError):
    pass


class ConditioningError(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class GeometryError(ValidationError):
    pass


class DensityError(NumericalError):
    pass

"""Exception hierarchy shared by all modules."""


class WcpsError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(WcpsError, ValueError):
    """Arguments or configuration violate a documented precondition."""


class DivergedError(WcpsError, ArithmeticError):
    """An iterative method did not converge within its iteration budget."""


class ConditioningError(WcpsError, ArithmeticError):
    """A matrix that must be inverted is numerically singular."""


class UncontrollableError(WcpsError, ValueError):
    """The (A, B) pair is not controllable to working precision."""


class InfeasibleError(WcpsError, ArithmeticError):
    """A certificate was requested for an operator with spectral radius >= 1."""


class NumericalError(WcpsError, ArithmeticError):
    """A computed result failed a structural sanity check (symmetry, definiteness)."""


class ContractViolation(WcpsError, RuntimeError):
    """A caller broke the calling protocol of a stateful object."""


class BracketError(WcpsError, ValueError):
    """A root search was started on an interval without a sign change."""


class AnalysisError(WcpsError, RuntimeError):
    """The analysis detected a condition it cannot resolve (e.g. non-monotone verdicts)."""

"""Exception hierarchy shared by all modules."""


class FracMemError(Exception):
    """Base class for library errors."""


class DomainError(FracMemError, ValueError):
    """Argument outside the domain of a function (t <= 0 where singular, x <= 0 for gamma, ...)."""


class OrderError(FracMemError, ValueError):
    """Invalid fractional order pair, e.g. a memory order below 1 - alpha."""


class DimensionError(FracMemError, ValueError):
    """Inconsistent matrix or vector shapes."""


class ConvergenceError(FracMemError, ArithmeticError):
    """A series hit its term cap, or cancellation left too few correct digits."""


class IntegrabilityError(FracMemError, ValueError):
    """A kernel/function combination is not integrable at a singular endpoint."""


class SingularGramianError(FracMemError, ArithmeticError):
    """The controllability Gramian is numerically singular."""

    def __init__(self, condition_estimate, threshold):
        self.condition_estimate = condition_estimate
        self.threshold = threshold
        super().__init__(
            f"Gramian condition estimate {condition_estimate:.3e} exceeds {threshold:.1e}"
        )


class RankError(FracMemError, ArithmeticError):
    """Rank condition required by a steering law does not hold."""

    def __init__(self, message, rank=None):
        self.rank = rank
        super().__init__(message)


class PrecisionWarning(RuntimeWarning):
    """Series evaluation lost a significant number of digits to cancellation."""

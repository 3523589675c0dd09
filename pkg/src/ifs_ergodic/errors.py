"""Exception hierarchy. The CLI maps each class to an exit code."""


class IfsError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ValidationError(IfsError, ValueError):
    """Input violates a type invariant or an operation precondition."""

    exit_code = 1


class CalibrationInfeasible(ValidationError):
    """No constants exist for the requested exponent."""


class BudgetExceeded(IfsError):
    """Exact enumeration would need more words than the budget allows."""

    exit_code = 2

    def __init__(self, words, budget, what="enumeration"):
        self.words = words
        self.budget = budget
        super().__init__(
            f"{what} needs {words} words, budget is {budget}; "
            "raise --budget or use --mode mc"
        )


class InvariantBreach(IfsError):
    """An internal invariant failed (e.g. a state left [0, 1])."""

    exit_code = 3

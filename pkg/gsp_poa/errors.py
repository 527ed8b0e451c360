"""Exception hierarchy shared by every module."""


class GspPoaError(Exception):
    """Base class for all errors raised by gsp_poa."""


class ShapeError(GspPoaError, ValueError):
    """Inputs have inconsistent lengths, bad indices or an invalid structure."""


class DomainViolation(GspPoaError, ValueError):
    """A PoA objective was evaluated at (or next to) a vanishing denominator."""


class InvalidUtility(GspPoaError, ValueError):
    """A learner was fed a non-finite utility."""


class ScriptOverbids(GspPoaError, ValueError):
    """A byzantine script bids above its agent's value."""


class UndefinedRatio(GspPoaError, ZeroDivisionError):
    """A welfare ratio has a zero (or negative) denominator."""


class BudgetExceeded(GspPoaError):
    def __init__(self, required: int, budget: int, what: str = "joint profiles"):
        self.required = required
        self.budget = budget
        super().__init__(f"{what}: need {required}, budget is {budget}")


class InvariantBreach(GspPoaError):
    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        message = f"invariant violated: {invariant}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ConstructionError(InvariantBreach):
    """A constructed instance failed its own verification."""

"""Exception types raised across the package."""


class PlanError(ValueError):
    """A plan document or plan value violates the plan schema."""

    def __init__(self, message, operator_id=None):
        if operator_id is not None:
            message = f"operator {operator_id}: {message}"
        super().__init__(message)
        self.operator_id = operator_id


class MissingActualCostError(PlanError):
    pass


class InsufficientFeedbackError(ValueError):
    pass


class PivotError(ValueError):
    """No usable pivot operator, or a pivot is required but absent."""


class DegenerateVarianceError(ValueError):
    def __init__(self, component):
        super().__init__(f"zero variance in {component}")
        self.component = component


class DomainError(ValueError):
    """Parameters outside the domain where a closed form is defined."""


class SynthError(ValueError):
    pass


class OracleMissError(KeyError):
    pass

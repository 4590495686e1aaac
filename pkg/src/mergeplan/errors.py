"""Exception types shared across the planning stack."""


class PlanningError(Exception):
    """Base class for planner failures that the caller may recover from."""


class DegenerateHypothesisError(PlanningError):
    """A maneuver hypothesis has an empty truncation interval (lower >= upper)."""


class DegenerateTruncationError(PlanningError):
    """The truncated-Gaussian normalizer is numerically zero."""


class NonFiniteCostError(PlanningError):
    """The objective produced NaN/inf during minimization."""


class FatalPlanningError(PlanningError):
    """No plan variant could be produced for the current cycle."""

"""
stability_lab/errors.py
Exception hierarchy for the stability lab.

Inapplicable bounds are reported as values (see bounds.BoundEntry), never raised.
"""


class LabError(Exception):
    """Base class for all lab errors"""


class ValidationError(LabError, ValueError):
    """Input violates a type invariant (non-monotone grid, negative weight, ...)"""


class GridMismatchError(ValidationError):
    """Two objects that must share a grid do not"""


class DegeneratePosteriorError(LabError):
    """Normalizing constant is zero, infinite or overflowed"""


class EnvelopeViolationError(LabError):
    """A sampled integrand left its declared envelope [ell, u]"""


class ConfigError(LabError):
    """Experiment configuration could not be parsed or is inconsistent"""


class BudgetExceededError(LabError):
    """Requested work exceeds a configured budget (states, nodes, draws)"""

    def __init__(self, budget: str, requested: float, limit: float):
        self.budget = budget
        self.requested = requested
        self.limit = limit
        super().__init__(f"{budget} budget exceeded: requested {requested:g} > limit {limit:g}")

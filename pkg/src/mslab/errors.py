"""Exception types raised across the package."""

from __future__ import annotations

import numpy as np


class MslabError(Exception):
    """Base class for all package errors."""


class DimensionOverflowError(MslabError):
    pass


class BudgetExceededError(MslabError):
    """A size or quadrature budget would be exceeded.

    ``required`` carries the projected requirement so callers can report it.
    """

    def __init__(self, message: str, required: int | float | None = None, budget=None):
        super().__init__(message)
        self.required = required
        self.budget = budget


class ConvergenceError(MslabError):
    """An iterative method ran out of iterations.

    The best iterate seen so far is kept on the exception.
    """

    def __init__(self, message: str, best_iterate=None, stats=None, history=None):
        super().__init__(message)
        self.best_iterate = best_iterate
        self.stats = stats
        self.history = history


class IndefiniteMatrixError(MslabError):
    def __init__(self, message: str, direction=None, curvature=None, lambda_min=None):
        super().__init__(message)
        self.direction = None if direction is None else np.asarray(direction)
        self.curvature = curvature
        self.lambda_min = lambda_min


class SingularMatrixError(MslabError):
    def __init__(self, message: str, pivot_index=None, pivot_value=None, pivots=None):
        super().__init__(message)
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        self.pivots = pivots


class DomainError(MslabError):
    """Evaluation outside the admissible domain or invalid parameters."""


class ConfigError(MslabError):
    pass

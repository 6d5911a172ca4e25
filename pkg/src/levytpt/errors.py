"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code should raise the most
specific type that applies rather than bare ValueError.
"""


class LevyTptError(Exception):
    """Base class for all package errors."""


class ConfigError(LevyTptError):
    """Bad or missing configuration (CLI exit code 2)."""


class EmptyResultError(LevyTptError):
    """A computation legitimately produced nothing, e.g. zero transitions (exit code 3)."""


class NumericError(LevyTptError):
    """Numerical failure: blow-up, singular system, residual too large (exit code 4)."""


class DependencyError(LevyTptError):
    """Missing or hash-mismatched input artifact (exit code 5)."""


class SimulationError(NumericError):
    """Non-finite state encountered while stepping an SDE."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

"""Exception types shared across the package."""

import numpy as np


class GradOptError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GradOptError, ValueError):
    pass


class EvaluationFailedError(GradOptError):
    """The objective returned a non-finite value (or raised) at ``point``."""

    def __init__(self, point, value=None, message=None):
        self.point = np.array(point, dtype=float, copy=True)
        self.value = value
        if message is None:
            message = f"objective evaluation failed at {self.point.tolist()!r} (value={value!r})"
        super().__init__(message)


class IngestionError(GradOptError):
    pass


class NumericError(GradOptError, ArithmeticError):
    pass


class MetricUndefinedError(GradOptError, ValueError):
    pass


class ConfigError(GradOptError, ValueError):
    pass

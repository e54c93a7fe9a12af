"""Exception types raised by the solver and its helpers."""

import numpy as np


class StradicError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StradicError, ValueError):
    """A configuration constant is outside its admissible range."""


class DimensionError(StradicError, ValueError):
    """Array shapes are inconsistent with the problem dimensions."""


class UnknownProblemError(StradicError, KeyError):
    def __init__(self, name, known):
        self.name = name
        self.known = tuple(known)
        super().__init__(f"unknown problem {name!r}; registered: {', '.join(self.known)}")

    def __str__(self):
        return self.args[0]


class ProblemEvaluationError(StradicError):
    """A user callback returned non-finite values."""

    def __init__(self, what, x):
        self.what = what
        self.x = np.array(x, dtype=float, copy=True)
        super().__init__(f"non-finite {what} at x={self.x.tolist()}")


class RankDeficientError(StradicError):
    """The constraint Jacobian is (numerically) rank deficient."""

    def __init__(self, sigma_min, threshold):
        self.sigma_min = float(sigma_min)
        self.threshold = float(threshold)
        super().__init__(
            f"Jacobian rank deficient: sigma_min={self.sigma_min:.3e} <= {self.threshold:.3e}"
        )


class InfeasibleNormalStepError(StradicError):
    """No normal step achieving the required decrease was found within budget."""

    def __init__(self, best_decrease, required_decrease, evaluations):
        self.best_decrease = float(best_decrease)
        self.required_decrease = float(required_decrease)
        self.evaluations = int(evaluations)
        super().__init__(
            f"normal step failed after {evaluations} evaluations: best decrease "
            f"{self.best_decrease:.3e} < required {self.required_decrease:.3e}"
        )


class ProjectionError(StradicError):
    """The projection could not be computed to the requested accuracy."""

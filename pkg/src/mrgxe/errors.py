"""Exception types shared across the package."""


class MRGxEError(Exception):
    """Base class for all package errors."""


class ConfigError(MRGxEError, ValueError):
    """Invalid parameter values or configuration keys."""


class RegressionError(MRGxEError):
    """Base class for fitting failures.

    ``method`` is filled in by the estimator layer so that a failure can be
    traced back to the second-stage model that produced it.
    """

    method = None

    def __str__(self):
        msg = super().__str__()
        if self.method is not None:
            return f"[{self.method}] {msg}"
        return msg


class RankDeficient(RegressionError):
    pass


class DimensionMismatch(RegressionError):
    pass


class DidNotConverge(RegressionError):
    pass


class SeparationSuspected(RegressionError):
    pass


class SingleClassResponse(RegressionError):
    pass


class NonPositiveSE(MRGxEError, ValueError):
    pass


class QuotaUnreachable(MRGxEError):
    """Case-control quotas not filled within the population-draw cap."""


class AllFitsFailed(MRGxEError):
    pass


class MalformedInput(MRGxEError, ValueError):
    """Input file does not follow the documented CSV layout."""

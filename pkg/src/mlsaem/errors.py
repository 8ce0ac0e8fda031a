"""Exception hierarchy shared across the package."""


class Error(Exception):
    """Base class for all package-specific errors."""


class ConfigError(Error):
    """Invalid parameters, schedules, or input-file contracts."""


class NumericError(Error):
    """Numeric failure during filtering or estimation."""


class DegenerateTransitionError(NumericError):
    """Transition density requested where its covariance is singular."""


class WeightCollapseError(NumericError):
    """All importance weights underflowed at one filter step."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"weight collapse at filter step {step}")


class RankDeficiencyError(NumericError):
    """Normal equations of the drift regression are rank deficient."""


class EstimationError(NumericError):
    """M-step or estimator-level failure (undefined ratio, degeneracy)."""

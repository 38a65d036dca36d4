"""Exception and warning types shared across the package."""


class AsymptolabError(Exception):
    """Base class for all package errors."""


class ScaleOutOfRange(AsymptolabError, ValueError):
    """A requested time scale cannot be represented on the grid."""


class OrderTooHigh(AsymptolabError, ValueError):
    """Multi-index order beyond what the Hermite toolkit supports."""


class NonFiniteField(AsymptolabError, ValueError):
    """A field picked up NaN or Inf values."""


class GridMismatch(AsymptolabError, ValueError):
    """Two fields on different grids were combined."""


class StepFailure(AsymptolabError, RuntimeError):
    """The adaptive time stepper could not meet its error target."""


class BoxExhausted(AsymptolabError, RuntimeError):
    """The solution reached the edge of the computational box."""


class QuadratureBudgetExceeded(AsymptolabError, RuntimeError):
    """Panel refinement did not reach the requested tolerance."""


class RangeViolation(AsymptolabError, ValueError):
    """The exponent p lies outside the range required by a construction."""


class TailBudgetExceeded(AsymptolabError, RuntimeError):
    """The truncated time-integral tail is larger than allowed."""


class DegenerateFit(AsymptolabError, ValueError):
    """Decay data are too few or too small to fit."""


class PlateauNotReached(AsymptolabError, RuntimeError):
    """A normalized remainder ratio has not settled by the last sample."""


class ConfigInvalid(AsymptolabError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingData(AsymptolabError, FileNotFoundError):
    """A run directory lacks the files needed for plotting."""


class BoundaryMassWarning(UserWarning):
    """Field is not negligible on the boundary shell; moments are untrusted."""

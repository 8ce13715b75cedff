"""Exception types shared across the package."""


class LoggasSleError(Exception):
    """Base class for all package errors."""


class NonOrderedConfiguration(LoggasSleError):
    """Particle positions are not strictly increasing."""


class NonPositive(LoggasSleError):
    """A half-line configuration has a non-positive coordinate."""


class StepFailure(LoggasSleError):
    """Adaptive bisection hit the maximum depth without a valid step.

    Signals that the (kappa, N, dt) regime is too stiff for the
    explicit integrator.  ``step_index`` is the macro-step index when
    raised from a path simulation, else None.
    """

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class UnsupportedBeta(LoggasSleError):
    """Matrix oracles exist only for kappa = 4 (beta = 2)."""


class NegativeNu(LoggasSleError):
    """nu must be a nonnegative integer for the matrix oracle."""


class EmptySample(LoggasSleError):
    """A sample set handed to a statistic is empty."""


class PoleHit(LoggasSleError):
    """The Loewner vector field was evaluated on top of a pole."""


class GridExceeded(LoggasSleError):
    """Requested evolution time lies beyond the driving grid."""


class SwallowedProbe(LoggasSleError):
    """An observable was requested at a probe that is no longer alive."""


class CoincidentPoints(LoggasSleError):
    """Green's function evaluated at z = w."""


class DomainViolation(LoggasSleError):
    """A point or configuration lies outside the required domain."""


class MeshTooCoarse(LoggasSleError):
    """Field mesh cannot resolve the intended test functions."""


class SupportOutsideBox(LoggasSleError):
    """Test-function support is not contained in the field box."""


class InsufficientSurvivors(LoggasSleError):
    """More than half of the Monte Carlo seeds died before the horizon."""


class ConfigError(LoggasSleError):
    """A run configuration failed validation.  ``key`` names the offender."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key

"""Exception types shared across the library."""


class HhcalError(Exception):
    """Base class for library errors."""


class ValidationError(HhcalError):
    """Invalid inputs: bad parameters, malformed scenarios, unknown presets."""


class NumericsError(HhcalError):
    """Base class for numerical failures."""


class StepUnderflowError(NumericsError):
    """Adaptive step fell below the floor; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class RunawaySpikingError(NumericsError):
    """Hybrid run exceeded the reset-event budget."""


class NewtonError(NumericsError):
    """Newton iteration failed to converge."""


class DetectionError(NumericsError):
    """A bifurcation detector could not certify its result."""


class AmbiguousOutcomeError(NumericsError):
    """A trajectory classifier hit its time budget without an outcome."""

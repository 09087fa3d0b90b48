"""Exception and warning types raised across the package."""


class GhostSimError(Exception):
    """Base class for all package errors."""


class InvalidArgument(GhostSimError, ValueError):
    pass


class GridMismatch(GhostSimError, ValueError):
    pass


class SamplingViolation(GhostSimError, ValueError):
    pass


class ZeroDistance(GhostSimError, ValueError):
    pass


class SizeExceeded(GhostSimError, ValueError):
    pass


class FarFieldViolation(GhostSimError, ValueError):
    pass


class OutOfGrid(GhostSimError, ValueError):
    pass


class InsufficientData(GhostSimError, ValueError):
    pass


class InvalidImpulse(GhostSimError, ValueError):
    pass


class InvalidScheme(GhostSimError, ValueError):
    pass


class MisalignedSeries(GhostSimError, ValueError):
    pass


class NondeterministicSource(GhostSimError, ValueError):
    pass


class FingerprintMismatch(GhostSimError, ValueError):
    pass


class NoPeak(GhostSimError, ValueError):
    pass


class ConfigError(GhostSimError, ValueError):
    """Malformed or incomplete scenario configuration."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class PreconditionViolation(GhostSimError, ValueError):
    pass


class FarFieldWarning(UserWarning):
    """Far-field factor is inside the hard limit but above the comfort threshold."""


class CoherenceRatioWarning(UserWarning):
    """Coherence radius is not much smaller than the intensity radius."""

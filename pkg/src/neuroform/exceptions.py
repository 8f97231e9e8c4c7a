"""Exception types shared across the package."""


class NeuroformError(Exception):
    """Base class for all package errors."""


class TopologyError(NeuroformError):
    """Malformed communication graph (bad indices, self-loops, ...)."""


class AssumptionError(NeuroformError):
    """A standing assumption is violated (disconnected graph, singular
    L+B, non-positive-definite control direction, ...)."""


class ConfigError(NeuroformError):
    """Invalid or inconsistent configuration input."""


class DataError(NeuroformError):
    """Training data cannot be assembled from the given trajectories."""


class DimensionError(NeuroformError):
    """Array arguments do not match the declared shapes."""


class WeightFormatError(NeuroformError):
    """A weight or dataset file is unreadable or has the wrong layout."""


class DivergenceError(NeuroformError):
    """The integrator produced a non-finite state.

    Carries the simulation time at which divergence was detected.
    """

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class TrainingDivergenceError(NeuroformError):
    """Training produced a non-finite loss."""

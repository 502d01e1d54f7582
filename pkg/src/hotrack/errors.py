"""Exception types raised across the package."""


class HotrackError(Exception):
    """Base class for all package errors."""


class DegenerateConfiguration(HotrackError):
    pass


class LengthMismatch(HotrackError, ValueError):
    pass


class EmptyReference(HotrackError, ValueError):
    pass


class EmptyCloud(HotrackError, ValueError):
    pass


class CorruptFile(HotrackError, IOError):
    pass


class NonOrientableMesh(HotrackError):
    pass


class NonFiniteEnergy(HotrackError, ValueError):
    pass


class ImplausibleJoints(HotrackError, ValueError):
    pass


class NoConvergence(HotrackError):
    """Optimization budget exhausted above the accepted residual.

    The best result found is attached as ``result`` so callers can still use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ModelDataMissing(HotrackError):
    pass


class NoVisibleJoints(HotrackError, ValueError):
    pass


class EmptyObject(HotrackError, ValueError):
    pass


class Rejected(HotrackError):
    """A generated trajectory violated the pre-grasp penetration bound."""

    def __init__(self, message, frame=None, depth=None):
        super().__init__(message)
        self.frame = frame
        self.depth = depth


class ConfigError(HotrackError, ValueError):
    pass


class SequenceIOError(HotrackError, IOError):
    pass


class MissingInitialization(HotrackError, ValueError):
    """A sequence lacks the frame-0 poses a tracking mode needs."""

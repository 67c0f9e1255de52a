"""Exception hierarchy shared by all modules."""
from __future__ import annotations


class CalabiError(Exception):
    """Base class for every error raised by this package."""


class NonKahlerClass(CalabiError, ValueError):
    """Class coefficients violate 0 < a < b."""


class TimeOutOfRange(CalabiError, ValueError):
    """Requested time lies at or beyond the singular time."""


class GridTooSmall(CalabiError, ValueError):
    pass


class BoundaryNode(CalabiError, IndexError):
    """Node index too close to x=0 or x=1 for the requested stencil."""


class InvalidProfile(CalabiError, ValueError):
    """Base for the three ways a profile grid can fail validation."""


class NotMonotone(InvalidProfile):
    pass


class EndpointMismatch(InvalidProfile):
    pass


class DegenerateSlope(InvalidProfile):
    pass


class FlowError(CalabiError):
    """Raised during time stepping; ``t`` is the time of the failing state."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t!r})")
        self.t = t


class DegenerateProfile(FlowError):
    pass


class StepRejected(FlowError):
    pass


class WrongCase(CalabiError, ValueError):
    """Certificate requested for a run of the wrong singularity type."""


class InsufficientRange(CalabiError, ValueError):
    pass


class UsageError(CalabiError, ValueError):
    """Bad command line flag or config key."""

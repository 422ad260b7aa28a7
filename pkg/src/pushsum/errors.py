"""Exception types shared across the package."""


class PushSumError(Exception):
    """Base class for all package-specific errors."""


class InvalidEdgeError(PushSumError, ValueError):
    """An edge is malformed: self-loop, duplicate, or endpoint out of range."""


class ConfigurationError(PushSumError, ValueError):
    """Parameters or scenario configuration are invalid or infeasible."""


class InsufficientRecordError(PushSumError, RuntimeError):
    """The transcript was not recorded with enough detail for the request."""


class AttackInfeasibleError(PushSumError, RuntimeError):
    """The adversary's observations do not support the requested attack."""


class FitDegenerateError(PushSumError, ValueError):
    """A rate fit window contains non-positive or too few error values."""


class AuditError(PushSumError, RuntimeError):
    """A freshly produced transcript violated a protocol invariant."""

"""Exception types shared across the package."""


class SandpileError(Exception):
    """Base class for all package errors."""


class ConfigError(SandpileError):
    """Invalid configuration (bad layout geometry, bad parameter, bad config file)."""


class LayoutError(SandpileError):
    """A stream was requested with the wrong orientation for its site."""


class IllegalMoveError(SandpileError):
    """A half-toppling was attempted at a site where it is not legal."""


class InvariantViolation(SandpileError):
    """A structural invariant of the dynamics failed; the replica is aborted."""


class CapExceeded(SandpileError):
    """The configured toppling cap was hit (diagnostic guard, not expected)."""

"""Exception hierarchy shared by the bound engine and the CLI."""


class BoundError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class InvalidParam(BoundError, ValueError):
    exit_code = 2


class ConfigError(BoundError, ValueError):
    exit_code = 2


class ZeroExitRate(BoundError, ValueError):
    exit_code = 2


class CertificateFailure(BoundError):
    exit_code = 3


class TruncationTooSmall(BoundError):
    """The escape gate is not below one, so no upper bound can be certified.

    The lower-bound result computed before the gate check is attached as
    ``lower`` so callers can still use it.
    """

    exit_code = 4

    def __init__(self, gate, lower=None, message=None):
        self.gate = gate
        self.lower = lower
        super().__init__(message or f"escape gate {gate:.6g} >= 1; enlarge the truncation set")


class SingularInner(BoundError):
    exit_code = 5


class NoConvergence(BoundError):
    exit_code = 5


class DegenerateDenominator(BoundError):
    exit_code = 5


class Reducible(BoundError):
    exit_code = 5


class MissingExact(BoundError):
    exit_code = 2

"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class WKBError(Exception):
    """Base class for all solver errors."""


class DomainError(WKBError, ValueError):
    """Wealth argument outside the utility's domain."""


class OutOfDomain(WKBError, ValueError):
    """State vector outside the model's box domain."""


class NotPositiveDefinite(WKBError, ValueError):
    """Covariance (or correlation) matrix failed its Cholesky factorization."""


class InnerNewtonDivergence(WKBError, RuntimeError):
    """An implicit leapfrog stage did not converge within the iteration cap."""


class MaxIterationsExceeded(WKBError, RuntimeError):
    """Flow-map inversion did not converge; try splitting the horizon."""


class SingularGain(WKBError, RuntimeError):
    """The variational gain matrix is numerically singular."""


class SingularA(WKBError, RuntimeError):
    """The linear OU system matrix is singular."""


class DegenerateBump(WKBError, RuntimeError):
    """A bumped characteristic left the model domain."""


class AllPathsInvalid(WKBError, RuntimeError):
    """Every Monte Carlo path was absorbed at the domain boundary."""


class ConfigError(WKBError, ValueError):
    """Run configuration failed validation."""

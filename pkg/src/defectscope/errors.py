"""Exception hierarchy for defectscope.

Every failure mode raised by the library derives from DefectscopeError so
callers (notably the CLI) can map errors to pipeline stages.
"""


class DefectscopeError(Exception):
    """Base class for all library errors."""


class OutOfBoundsError(DefectscopeError):
    """A price violates the no-arbitrage bounds required for inversion."""


class NoConvergenceError(DefectscopeError):
    """An iterative solver exhausted its iteration budget."""


class ExpansionBreakdownError(DefectscopeError):
    """The implied-vol expansion produced a non-finite or non-positive value."""


class NuDegenerateError(DefectscopeError):
    """An operation requiring vol-of-vol > 0 was called with nu = 0."""


class TauTooSmallError(DefectscopeError):
    """Scaled time below the quadrature's trustworthy range (use the small-T branch)."""


class QuadratureError(DefectscopeError):
    """Adaptive quadrature failed to converge to the requested tolerance."""


class ParseError(DefectscopeError):
    """Malformed chain file; carries row/column context in the message."""


class MissingMetadataError(DefectscopeError):
    """A required metadata line is absent from a chain file."""


class EmptyAfterFilterError(DefectscopeError):
    """No quotes survived the liquidity filters."""


class NoBracketingStrikesError(DefectscopeError):
    """No strike with both call and put quotes near the forward estimate."""


class NoPositiveRootError(DefectscopeError):
    """The ATM vol-level polynomial has no positive real root."""


class InfeasibleStartError(DefectscopeError):
    """Optimization could not produce a point with positive posterior density."""


class InvalidInitError(DefectscopeError):
    """MCMC initial state has zero posterior density."""


class DegenerateSampleError(DefectscopeError):
    """Density estimation needs at least two distinct sample values."""


class EmptyChainError(DefectscopeError):
    """No samples remain after burn-in trimming."""

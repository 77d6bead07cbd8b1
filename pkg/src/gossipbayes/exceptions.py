"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError` so that callers (the
CLI in particular) can map them to a single exit status.
"""


class GossipBayesError(Exception):
    """Base class for all package errors."""


class DomainError(GossipBayesError, ValueError):
    """A parameter lies outside the domain of the operation."""


class NumericalError(GossipBayesError, ArithmeticError):
    """A computation produced an unusable numerical result."""


class SingularFim(NumericalError):
    """The Fisher information matrix is too ill-conditioned to invert."""


class InvalidPosterior(NumericalError):
    """A global natural parameter left the normalizable region."""


class NonFinite(NumericalError):
    """A loss or density evaluated to a non-finite value."""


class GraphError(GossipBayesError, ValueError):
    pass


class DisconnectedGraph(GraphError):
    pass


class InvalidEdge(GraphError):
    pass


class ConfigError(GossipBayesError, ValueError):
    """Malformed or out-of-range experiment configuration."""

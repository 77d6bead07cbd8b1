"""Gossip-based federated variational Bayes learning and unlearning on graphs."""

from . import expfam, gfvl, graph, oracle
from .estimator import GossipVariationalBayes
from .exceptions import (
    ConfigError,
    DisconnectedGraph,
    DomainError,
    GossipBayesError,
    InvalidEdge,
    InvalidPosterior,
    NonFinite,
    NumericalError,
    SingularFim,
)

__all__ = [
    "expfam",
    "gfvl",
    "graph",
    "oracle",
    "GossipVariationalBayes",
    "ConfigError",
    "DisconnectedGraph",
    "DomainError",
    "GossipBayesError",
    "InvalidEdge",
    "InvalidPosterior",
    "NonFinite",
    "NumericalError",
    "SingularFim",
]

__version__ = "0.1.0"

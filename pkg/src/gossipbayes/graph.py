"""Undirected topologies and Metropolis-Hastings random-walk scheduling.

A walk proposes a uniformly chosen neighbour ``j`` of the current node ``k``
and moves there with probability ``min(1, deg(k) / deg(j))``; otherwise it
stays.  The uniform distribution over nodes is stationary, and the first node
is drawn uniformly, so every scheduled node is marginally uniform.

Iterations are counted from the initial placement, which is slot 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._validation import check_generator, check_positive
from .exceptions import DisconnectedGraph, InvalidEdge

__all__ = [
    "Topology",
    "WalkTrace",
    "MCEstimate",
    "build",
    "from_edges",
    "read_edge_list",
    "mh_step",
    "mh_step_many",
    "transition_matrix",
    "walk",
    "cover_time_mc",
    "hitting_time_mc",
    "complete_cover_steps",
    "complete_hitting_time",
]


@dataclass(frozen=True, eq=False)
class Topology:
    """Connected simple undirected graph on nodes ``0 .. K-1``."""

    adjacency: np.ndarray
    kind: str = "custom"
    degrees: np.ndarray = field(init=False, repr=False)
    neighbors: tuple = field(init=False, repr=False)
    _table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise InvalidEdge(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if np.any(np.diag(adj)):
            raise InvalidEdge("self-loops are not allowed")
        if not np.array_equal(adj, adj.T):
            raise InvalidEdge("adjacency must be symmetric")
        adj = adj.copy()
        adj.setflags(write=False)
        degrees = adj.sum(axis=1).astype(np.int64)
        degrees.setflags(write=False)
        neighbors = tuple(np.flatnonzero(row) for row in adj)
        # padded neighbour table for vectorized stepping
        table = np.zeros((adj.shape[0], max(int(degrees.max()), 1)), dtype=np.int64)
        for k, nbrs in enumerate(neighbors):
            table[k, : nbrs.size] = nbrs
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "neighbors", neighbors)
        object.__setattr__(self, "_table", table)
        if not _is_connected(neighbors):
            raise DisconnectedGraph(f"{self.kind} topology with K={adj.shape[0]} is not connected")

    @property
    def K(self):
        return self.adjacency.shape[0]

    def edges(self):
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return list(zip(rows.tolist(), cols.tolist()))


def _is_connected(neighbors):
    seen = np.zeros(len(neighbors), dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        k = stack.pop()
        for j in neighbors[k]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


class WalkTrace(NamedTuple):
    nodes: np.ndarray
    seed: object = None


class MCEstimate(NamedTuple):
    """Monte-Carlo mean with a normal-approximation 95% interval."""

    mean: float
    ci: tuple
    stderr: float
    trials: int


def from_edges(edges, K=None, kind="custom"):
    """Build a topology from ``(u, v)`` pairs; ``K`` defaults to max index + 1."""
    edges = [(int(u), int(v)) for u, v in edges]
    if K is None:
        if not edges:
            raise InvalidEdge("empty edge list")
        K = max(max(e) for e in edges) + 1
    adj = np.zeros((K, K), dtype=bool)
    for u, v in edges:
        if u == v:
            raise InvalidEdge(f"self-loop at node {u}")
        if not (0 <= u < K and 0 <= v < K):
            raise InvalidEdge(f"edge ({u}, {v}) out of range for K={K}")
        adj[u, v] = adj[v, u] = True
    return Topology(adj, kind=kind)


def read_edge_list(path):
    """Parse a whitespace-separated edge list file (``#`` starts a comment line)."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidEdge(f"{path}:{lineno}: expected two node indices, got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise InvalidEdge(f"{path}:{lineno}: non-integer node index in {line!r}") from None
        if u < 0 or v < 0:
            raise InvalidEdge(f"{path}:{lineno}: negative node index")
        edges.append((u, v))
    return from_edges(edges, kind="custom")


def build(kind, K=None, edges=None):
    """Construct a named topology.

    ``star`` uses node 0 as hub and ``ring`` connects ``0-1-...-(K-1)-0``.
    ``custom`` takes an explicit ``edges`` list.  A single-node ``complete``
    graph is allowed so that degenerate one-agent runs can be expressed.
    """
    if kind == "custom":
        if edges is None:
            raise InvalidEdge("custom topology requires an edge list")
        return from_edges(edges, K=K)
    check_positive(K, "K", integer=True)
    if K < 2 and kind != "complete":
        raise InvalidEdge(f"{kind} topology needs K >= 2")
    adj = np.zeros((K, K), dtype=bool)
    if kind == "star":
        adj[0, 1:] = adj[1:, 0] = True
    elif kind == "ring":
        idx = np.arange(K)
        adj[idx, (idx + 1) % K] = True
        adj[(idx + 1) % K, idx] = True
    elif kind == "complete":
        adj[:] = True
        np.fill_diagonal(adj, False)
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return Topology(adj, kind=kind)


def mh_step(topology, current, rng):
    """Schedule the node for the next slot from ``current``."""
    deg = topology.degrees
    if deg[current] == 0:
        return int(current)
    u_pick, u_accept = rng.random(2)
    nbrs = topology.neighbors[current]
    j = int(nbrs[int(u_pick * nbrs.size)])
    if u_accept < min(1.0, deg[current] / deg[j]):
        return j
    return int(current)


def mh_step_many(topology, current, rng):
    """Vectorized :func:`mh_step` for an array of independent walkers."""
    current = np.asarray(current, dtype=np.int64)
    deg = topology.degrees
    u = rng.random((2, current.size))
    d_cur = deg[current]
    pick = np.minimum((u[0] * d_cur).astype(np.int64), np.maximum(d_cur - 1, 0))
    proposal = topology._table[current, pick]
    accept = (d_cur > 0) & (u[1] * deg[proposal] < d_cur)
    return np.where(accept, proposal, current)


def transition_matrix(topology):
    """Exact MH transition probabilities ``P[k, j]``."""
    K = topology.K
    deg = topology.degrees.astype(float)
    P = np.zeros((K, K))
    for k in range(K):
        for j in topology.neighbors[k]:
            P[k, j] = min(1.0, deg[k] / deg[j]) / deg[k]
        P[k, k] = 1.0 - P[k].sum()
    return P


def walk(topology, length, rng=None):
    """Scheduled nodes for ``length`` slots, starting from a uniform draw."""
    check_positive(length, "length", integer=True)
    seed = rng
    rng = check_generator(rng)
    nodes = np.empty(length, dtype=np.int64)
    nodes[0] = rng.integers(topology.K)
    for i in range(1, length):
        nodes[i] = mh_step(topology, nodes[i - 1], rng)
    return WalkTrace(nodes, seed)


def _estimate(samples):
    samples = np.asarray(samples, dtype=float)
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
    return MCEstimate(mean, (mean - 1.96 * stderr, mean + 1.96 * stderr), stderr, int(samples.size))


def _initial(topology, trials, rng, start):
    if start is None:
        return rng.integers(topology.K, size=trials)
    return np.full(trials, int(start), dtype=np.int64)


def cover_time_mc(topology, trials, rng=None, nodes=None, start=None, max_steps=10**7):
    """Slots until every node in ``nodes`` (default: all) has been scheduled.

    The initial placement counts as slot 1, so the additional steps after
    placement are ``mean - 1``.
    """
    check_positive(trials, "trials", integer=True)
    rng = check_generator(rng)
    required = np.zeros(topology.K, dtype=bool)
    required[np.arange(topology.K) if nodes is None else np.asarray(list(nodes), dtype=np.int64)] = True
    pos = _initial(topology, trials, rng, start)
    visited = np.zeros((trials, topology.K), dtype=bool)
    rows = np.arange(trials)
    visited[rows, pos] = True
    slots = np.ones(trials, dtype=np.int64)
    active = ~np.all(visited[:, required], axis=1)
    step = 1
    while active.any():
        if step >= max_steps:
            raise RuntimeError(f"walk did not cover the graph within {max_steps} steps")
        step += 1
        idx = np.flatnonzero(active)
        pos[idx] = mh_step_many(topology, pos[idx], rng)
        visited[idx, pos[idx]] = True
        done = np.all(visited[idx][:, required], axis=1)
        slots[idx[done]] = step
        active[idx[done]] = False
    return _estimate(slots)


def hitting_time_mc(topology, target, trials, rng=None, start=None, max_steps=10**7):
    """Slots until ``target`` is first scheduled (initial placement is slot 1)."""
    check_positive(trials, "trials", integer=True)
    if not 0 <= target < topology.K:
        raise ValueError(f"target {target} out of range for K={topology.K}")
    rng = check_generator(rng)
    pos = _initial(topology, trials, rng, start)
    slots = np.ones(trials, dtype=np.int64)
    active = pos != target
    step = 1
    while active.any():
        if step >= max_steps:
            raise RuntimeError(f"target not reached within {max_steps} steps")
        step += 1
        idx = np.flatnonzero(active)
        pos[idx] = mh_step_many(topology, pos[idx], rng)
        hit = pos[idx] == target
        slots[idx[hit]] = step
        active[idx[hit]] = False
    return _estimate(slots)


def complete_cover_steps(K):
    """Expected steps after placement to cover a complete graph: ``sum (K-1)/(K-i)``."""
    return float(sum((K - 1) / (K - i) for i in range(1, K)))


def complete_hitting_time(K):
    """Expected slots to first schedule a given node on a complete graph: ``1/K + K - 1``."""
    return 1.0 / K + K - 1.0

"""Gossip-based federated variational learning and unlearning.

The global variational posterior ``q(theta | eta)`` is a Beta distribution
whose natural parameter travels along a Metropolis-Hastings random walk.  The
scheduled agent minimizes its local free energy (expected local loss plus
``alpha`` times the KL to the cavity ``eta - eta_k``) and records its
approximate local likelihood ``eta_k`` so that, at every slot boundary,

    eta == prior_nat + sum_k eta_k.

Unlearning exploits that factorization: the forgotten agent subtracts its
``eta_k`` the first time it is scheduled after the request.

The engine never sees an oracle.  KL traces and stopping rules based on
divergence live in :mod:`gossipbayes.experiments`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import expfam
from . import graph as _graph
from ._validation import check_generator, check_natural, check_positive
from .exceptions import DomainError, InvalidPosterior

__all__ = [
    "AgentState",
    "GlobalState",
    "ProtocolConfig",
    "UnlearnRequest",
    "RunRecord",
    "make_agents",
    "local_loss_scale",
    "reinforce_gradient",
    "exact_moment_gradient",
    "local_free_energy",
    "slot_update_conjugate",
    "slot_update_nonconjugate",
    "run_learning",
    "run_unlearning",
    "multi_unlearn",
]

PATHS = ("conjugate", "nonconjugate")
GRADIENTS = ("reinforce", "exact")


@dataclass(frozen=True, eq=False)
class AgentState:
    """One agent's data set and approximate local likelihood ``eta_k``."""

    id: int
    data: np.ndarray
    local_nat: np.ndarray = field(default_factory=lambda: np.zeros(2))
    visited: bool = False
    deleted: bool = False


@dataclass(frozen=True, eq=False)
class GlobalState:
    """The variational parameter in flight and the walk position."""

    global_nat: np.ndarray
    prior_nat: np.ndarray
    iteration: int = 0
    current: int = -1


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol hyper-parameters.

    ``L`` local natural-gradient steps with learning rate ``rho`` and ``S``
    score-function samples (baseline ``c``) are used by the non-conjugate
    path only.  ``rho_schedule``, when given, maps the slot index to a
    learning rate and overrides ``rho``.  ``normalize_local_loss`` divides
    each agent's summed loss by its data-set size.
    """

    alpha: float = 1.0
    path: str = "conjugate"
    rho: float = 5e-3
    L: int = 1
    S: int = 30
    c: float = 0.0
    max_slots: int = 10_000
    likelihood: object = "bernoulli"
    normalize_local_loss: bool = False
    gradient: str = "reinforce"
    stop_on_cover: bool = True
    shape_floor: float = 1e-3
    max_halvings: int = 30
    rho_schedule: object = None

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.rho, "rho")
        check_positive(self.L, "L", integer=True)
        check_positive(self.S, "S", integer=True)
        check_positive(self.max_slots, "max_slots", integer=True)
        if self.path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}, got {self.path!r}")
        if self.gradient not in GRADIENTS:
            raise ValueError(f"gradient must be one of {GRADIENTS}, got {self.gradient!r}")
        model = expfam.get_likelihood(self.likelihood)
        if self.path == "conjugate" and not model.conjugate:
            raise ValueError(f"{model.name} likelihood has no conjugate update")
        object.__setattr__(self, "likelihood", model)

    @property
    def model(self):
        return self.likelihood

    def step_size(self, slot):
        return self.rho if self.rho_schedule is None else float(self.rho_schedule(slot))


@dataclass(frozen=True)
class UnlearnRequest:
    target: int
    issued_at: int = 1


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Per-slot trace of one run plus the terminal protocol state.

    ``nodes[i]``, ``events[i]`` and ``global_nats[i]`` describe slot ``i + 1``
    of this phase; ``global_nats[i]`` is the parameter forwarded at the end of
    that slot.  ``deletions`` maps each forgotten agent to its deletion slot.
    """

    nodes: np.ndarray
    events: tuple
    global_nats: np.ndarray
    state: GlobalState
    agents: tuple
    deletions: dict = field(default_factory=dict)

    @property
    def n_slots(self):
        return len(self.nodes)

    @property
    def terminal_nat(self):
        return self.state.global_nat


def make_agents(datasets, likelihood="bernoulli"):
    """Fresh agents (``eta_k = 0``) for a list of per-agent data sets."""
    model = expfam.get_likelihood(likelihood)
    return [AgentState(k, model.check_data(d)) for k, d in enumerate(datasets)]


def local_loss_scale(agent, cfg):
    """Multiplier applied to the summed per-datum loss of ``agent``."""
    if cfg.normalize_local_loss and agent.data.size:
        return 1.0 / agent.data.size
    return 1.0


def _check_normalizable(eta, where):
    if not np.all(np.isfinite(eta)) or not np.all(eta > -1.0):
        raise InvalidPosterior(f"{where}: global parameter {eta} is not normalizable")


def reinforce_gradient(eta, model, data, rng, S, c=0.0, scale=1.0):
    """Score-function estimate of the moment-coordinate gradient of the expected local loss.

    Averages ``(L(theta_s) - c) * FIM^-1 (s(theta_s) - mu)`` over ``S`` draws
    ``theta_s ~ q(theta | eta)``.
    """
    theta = expfam.sample(eta, rng, S)
    weights = model.total_loss(data, theta, scale) - c
    return weights @ expfam.score_in_moment_coords(eta, theta) / S


def exact_moment_gradient(eta, model, data, scale=1.0):
    """Closed-form ``grad_mu E_q[L]``, i.e. ``FIM^-1 grad_eta E_q[L]``."""
    return expfam.fim_inverse(eta) @ model.expected_loss_grad(data, eta, scale)


def local_free_energy(eta, cavity_nat, model, data, alpha=1.0, scale=1.0):
    """``E_q[L_k] + alpha * KL(q || cavity)`` with closed-form terms."""
    return model.expected_loss(data, eta, scale) + alpha * expfam.kl(eta, cavity_nat)


def slot_update_conjugate(g, a, cfg=None):
    """Exact local free-energy minimizer for a conjugate likelihood.

    The agent swaps its previous factor for the (``1/alpha``-tempered)
    sum of its data contributions.  Re-scheduling a visited agent is a no-op.
    """
    cfg = cfg or ProtocolConfig()
    if a.deleted:
        return g, a
    increment = cfg.model.contrib_sum(a.data) * (local_loss_scale(a, cfg) / cfg.alpha)
    new_global = g.global_nat - a.local_nat + increment
    _check_normalizable(new_global, f"conjugate update at agent {a.id}")
    new_local = new_global - g.global_nat + a.local_nat
    return replace(g, global_nat=new_global), replace(a, local_nat=new_local, visited=True)


def slot_update_nonconjugate(g, a, cfg, rng, slot=None):
    """``cfg.L`` natural-gradient steps on the local free energy.

    Inside the loop the local factor is kept at ``eta_k[l] = eta[l] - eta[0] + eta_k[0]``
    so the cavity stays fixed.  A step that would push either Beta shape of
    the global parameter below ``cfg.shape_floor`` is retried with the step
    size halved, at most ``cfg.max_halvings`` times.
    """
    if a.deleted:
        return g, a
    check_natural(g.global_nat, name="global_nat")
    rng = check_generator(rng)
    model = cfg.model
    scale = local_loss_scale(a, cfg)
    rho = cfg.step_size(g.iteration if slot is None else slot)
    floor = cfg.shape_floor - 1.0
    eta0 = g.global_nat
    eta = eta0
    for _ in range(cfg.L):
        local = eta - eta0 + a.local_nat
        if cfg.gradient == "exact":
            grad = exact_moment_gradient(eta, model, a.data, scale)
        else:
            grad = reinforce_gradient(eta, model, a.data, rng, cfg.S, cfg.c, scale)
        direction = local + grad / cfg.alpha
        step = rho
        for _ in range(cfg.max_halvings + 1):
            candidate = eta - step * direction
            if np.all(np.isfinite(candidate)) and np.all(candidate >= floor):
                break
            step *= 0.5
        else:
            raise InvalidPosterior(
                f"nonconjugate update at agent {a.id}: no feasible step from {eta} "
                f"after {cfg.max_halvings} halvings"
            )
        eta = candidate
    new_local = eta - eta0 + a.local_nat
    return replace(g, global_nat=eta), replace(a, local_nat=new_local, visited=True)


def _covered(agents):
    return all(a.visited or a.deleted for a in agents)


def run_learning(topology, agents, cfg, prior_nat, rng=None, state=None):
    """Run the protocol along one MH walk.

    Starts from ``state`` when given (continuing its walk), otherwise from
    the prior with a uniformly drawn first agent.  The conjugate path stops
    once every non-deleted agent has been visited (if ``cfg.stop_on_cover``);
    both paths stop after ``cfg.max_slots`` slots.
    """
    if not agents:
        raise ValueError("at least one agent is required")
    if len(agents) != topology.K:
        raise ValueError(f"{len(agents)} agents for a topology with K={topology.K}")
    rng = check_generator(rng)
    walk_rng, mc_rng = rng.spawn(2)
    agents = list(agents)
    if state is None:
        prior_nat = check_natural(prior_nat, name="prior_nat")
        g = GlobalState(prior_nat.copy(), prior_nat.copy())
        node = int(walk_rng.integers(topology.K))
    else:
        g = state
        node = _graph.mh_step(topology, state.current, walk_rng)

    conjugate = cfg.path == "conjugate"
    nodes, snaps = [], []
    for slot in range(1, cfg.max_slots + 1):
        g = replace(g, iteration=g.iteration + 1, current=node)
        if conjugate:
            g, agents[node] = slot_update_conjugate(g, agents[node], cfg)
        else:
            g, agents[node] = slot_update_nonconjugate(g, agents[node], cfg, mc_rng, slot)
        nodes.append(node)
        snaps.append(g.global_nat)
        if conjugate and cfg.stop_on_cover and _covered(agents):
            break
        node = _graph.mh_step(topology, node, walk_rng)

    return RunRecord(
        nodes=np.asarray(nodes, dtype=np.int64),
        events=("learn",) * len(nodes),
        global_nats=np.asarray(snaps, dtype=float).reshape(-1, 2),
        state=g,
        agents=tuple(agents),
    )


def multi_unlearn(record, topology, targets, rng=None, issued_at=1, max_slots=None, stop_when_done=True):
    """Forget several agents by subtract-and-forward along the continuing walk.

    Non-target agents forward the parameter unchanged.  Each target, at its
    first scheduling on or after slot ``issued_at``, subtracts its local
    factor and is marked deleted (it keeps relaying).  With
    ``stop_when_done`` the phase ends once every target is processed;
    otherwise it runs exactly ``max_slots`` slots.
    """
    targets = [int(t) for t in targets]
    if not targets:
        raise ValueError("targets must be non-empty")
    if len(set(targets)) != len(targets):
        raise ValueError("targets must be distinct")
    for t in targets:
        if not 0 <= t < topology.K:
            raise ValueError(f"target {t} out of range for K={topology.K}")
    if max_slots is None:
        if not stop_when_done:
            raise ValueError("max_slots is required when stop_when_done is False")
        max_slots = 10**7
    rng = check_generator(rng)
    agents = list(record.agents)
    g = record.state
    pending = set(targets)
    deletions = {}
    nodes, events, snaps = [], [], []
    node = _graph.mh_step(topology, g.current, rng) if g.current >= 0 else int(rng.integers(topology.K))
    for slot in range(1, max_slots + 1):
        g = replace(g, iteration=g.iteration + 1, current=node)
        event = "unlearn-forward"
        if node in pending and slot >= issued_at:
            agent = agents[node]
            new_global = g.global_nat - agent.local_nat
            _check_normalizable(new_global, f"unlearning agent {node}")
            g = replace(g, global_nat=new_global)
            agents[node] = replace(agent, local_nat=np.zeros(2), deleted=True)
            pending.discard(node)
            deletions[node] = slot
            event = "unlearn-delete"
        nodes.append(node)
        events.append(event)
        snaps.append(g.global_nat)
        if stop_when_done and not pending:
            break
        node = _graph.mh_step(topology, node, rng)

    return RunRecord(
        nodes=np.asarray(nodes, dtype=np.int64),
        events=tuple(events),
        global_nats=np.asarray(snaps, dtype=float).reshape(-1, 2),
        state=g,
        agents=tuple(agents),
        deletions=deletions,
    )


def run_unlearning(record, topology, request, rng=None, max_slots=None, stop_when_done=True):
    """Forget the single agent named in ``request``; see :func:`multi_unlearn`."""
    if isinstance(request, (int, np.integer)):
        request = UnlearnRequest(int(request))
    return multi_unlearn(
        record,
        topology,
        [request.target],
        rng,
        issued_at=request.issued_at,
        max_slots=max_slots,
        stop_when_done=stop_when_done,
    )


def factorization_residual(record_or_state, agents=None):
    """Max abs deviation of ``eta - (prior + sum_k eta_k)``."""
    if isinstance(record_or_state, RunRecord):
        g, agents = record_or_state.state, record_or_state.agents
    else:
        g = record_or_state
    if agents is None:
        raise DomainError("agents are required with a bare GlobalState")
    total = g.prior_nat + np.sum([a.local_nat for a in agents], axis=0)
    return float(np.max(np.abs(g.global_nat - total)))

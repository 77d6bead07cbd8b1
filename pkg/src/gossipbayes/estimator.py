"""scikit-learn style estimator around the gossip protocol.

Samples are assigned to agents by an integer label vector (like the
``groups`` argument of scikit-learn splitters)::

    est = GossipVariationalBayes(topology="ring", random_state=0)
    est.fit(z, agents=labels)
    est.unlearn(3)
    est.posterior_shape_
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import expfam, gfvl, oracle
from . import graph as _graph
from ._validation import check_generator

__all__ = ["GossipVariationalBayes"]


class GossipVariationalBayes(BaseEstimator):
    """Beta posterior over ``theta`` learned by gossip among data-holding agents.

    Parameters
    ----------
    likelihood : {"bernoulli", "exponential"}
        Per-datum model ``p(z | theta)``; the loss is its negative log.
    topology : str, Topology or list of edges
        ``"star"``, ``"ring"`` or ``"complete"`` over the agents found in
        ``fit``, an explicit :class:`~gossipbayes.graph.Topology`, or edges.
    prior : tuple of float
        Beta prior shapes ``(a, b)``.
    alpha : float
        Temperature of the generalized posterior.
    path : {"auto", "conjugate", "nonconjugate"}
        ``"auto"`` uses the exact update whenever the likelihood allows it.
    rho, n_local_iter, n_samples, baseline : float, int, int, float
        Learning rate, local steps per slot, score-function samples and
        baseline for the non-conjugate path.
    max_slots : int or None
        Slot budget; ``None`` means 10000 (conjugate, which stops once every
        agent is visited) or 2000 (non-conjugate).
    normalize_local_loss : bool
        Average rather than sum each agent's per-datum losses.
    random_state : None, int or numpy Generator

    Attributes
    ----------
    natural_params_ : ndarray of shape (2,)
    local_natural_params_ : ndarray of shape (n_agents, 2)
    posterior_shape_ : tuple of float
    topology_ : Topology
    record_ : RunRecord
        Trace of the latest learning or unlearning phase.
    deleted_agents_ : list of int
    """

    def __init__(
        self,
        likelihood="bernoulli",
        topology="complete",
        prior=(2.0, 2.0),
        alpha=1.0,
        path="auto",
        rho=5e-3,
        n_local_iter=1,
        n_samples=30,
        baseline=0.0,
        max_slots=None,
        normalize_local_loss=False,
        random_state=None,
    ):
        self.likelihood = likelihood
        self.topology = topology
        self.prior = prior
        self.alpha = alpha
        self.path = path
        self.rho = rho
        self.n_local_iter = n_local_iter
        self.n_samples = n_samples
        self.baseline = baseline
        self.max_slots = max_slots
        self.normalize_local_loss = normalize_local_loss
        self.random_state = random_state

    def _protocol(self):
        model = expfam.get_likelihood(self.likelihood)
        path = self.path
        if path == "auto":
            path = "conjugate" if model.conjugate else "nonconjugate"
        max_slots = self.max_slots
        if max_slots is None:
            max_slots = 10_000 if path == "conjugate" else 2000
        return gfvl.ProtocolConfig(
            alpha=self.alpha,
            path=path,
            rho=self.rho,
            L=self.n_local_iter,
            S=self.n_samples,
            c=self.baseline,
            max_slots=max_slots,
            likelihood=model,
            normalize_local_loss=self.normalize_local_loss,
        )

    def _topology(self, K):
        if isinstance(self.topology, _graph.Topology):
            topo = self.topology
        elif isinstance(self.topology, str):
            topo = _graph.build(self.topology, K)
        else:
            topo = _graph.from_edges(self.topology, K=K)
        if topo.K != K:
            raise ValueError(f"topology has {topo.K} nodes but the data has {K} agents")
        return topo

    @staticmethod
    def _check_X(X):
        X = check_array(X, ensure_2d=False, dtype=float, ensure_min_samples=0)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"expected a single feature, got {X.shape[1]}")
            X = X[:, 0]
        return X

    def fit(self, X, y=None, agents=None):
        """Run the protocol until its stopping rule.

        ``agents`` gives the owning agent (``0 .. K-1``) of every sample; all
        samples belong to agent 0 when omitted.  Agents without samples are
        allowed and act as relays holding no data.
        """
        X = self._check_X(X)
        agents = np.zeros(X.size, dtype=np.int64) if agents is None else np.asarray(agents)
        if agents.shape != X.shape or (agents.size and (agents.min() < 0 or not np.issubdtype(agents.dtype, np.integer))):
            raise ValueError("agents must be non-negative integer labels, one per sample")
        K = int(agents.max()) + 1 if agents.size else 1
        if isinstance(self.topology, _graph.Topology):
            K = max(K, self.topology.K)
        cfg = self._protocol()
        model = cfg.model
        datasets = [X[agents == k] for k in range(K)]
        prior_nat = expfam.from_shape(*self.prior)
        rng = check_generator(self.random_state)
        fit_rng, self._unlearn_rng = rng.spawn(2)

        self.topology_ = self._topology(K)
        self.n_agents_ = K
        self.prior_nat_ = prior_nat
        self.record_ = gfvl.run_learning(self.topology_, gfvl.make_agents(datasets, model), cfg, prior_nat, fit_rng)
        self.deleted_agents_ = []
        self._sync()
        return self

    def _sync(self):
        self.natural_params_ = self.record_.state.global_nat.copy()
        self.local_natural_params_ = np.array([a.local_nat for a in self.record_.agents])
        self.posterior_shape_ = expfam.to_shape(self.natural_params_)
        self.n_slots_ = self.record_.n_slots

    def unlearn(self, agents):
        """Remove the contribution of one or more agents by subtract-and-forward."""
        check_is_fitted(self, "record_")
        targets = [int(agents)] if np.isscalar(agents) else [int(a) for a in agents]
        self.record_ = gfvl.multi_unlearn(self.record_, self.topology_, targets, self._unlearn_rng)
        self.deleted_agents_ = sorted(set(self.deleted_agents_) | set(targets))
        self.deletion_slots_ = dict(self.record_.deletions)
        self._sync()
        return self

    def sample(self, n_samples=1, random_state=None):
        """Draw ``theta`` from the variational posterior."""
        check_is_fitted(self, "natural_params_")
        return expfam.sample(self.natural_params_, check_generator(random_state), n_samples)

    def score_samples(self, X):
        """Log posterior-predictive density of each sample (grid quadrature over ``theta``)."""
        check_is_fitted(self, "natural_params_")
        X = self._check_X(X)
        model = expfam.get_likelihood(self.likelihood)
        theta = oracle.midpoint_grid(oracle.DEFAULT_GRID_POINTS)
        log_q = expfam.log_pdf(self.natural_params_, theta)
        log_w = log_q - logsumexp(log_q)
        out = np.empty(X.size)
        for start in range(0, X.size, 256):
            chunk = X[start : start + 256, None]
            out[start : start + 256] = logsumexp(log_w - model.loss(chunk, theta), axis=1)
        return out

    def score(self, X, y=None):
        """Mean log posterior-predictive density."""
        return float(np.mean(self.score_samples(X)))

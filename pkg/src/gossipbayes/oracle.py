"""Reference posteriors and divergences used to score protocol runs."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expfam
from ._validation import check_natural, check_positive
from .exceptions import NonFinite

__all__ = [
    "DEFAULT_GRID_POINTS",
    "GridDensity",
    "midpoint_grid",
    "exact_conjugate_posterior",
    "grid_generalized_posterior",
    "kl_variational_to_oracle",
]

DEFAULT_GRID_POINTS = 10_001


@dataclass(frozen=True, eq=False)
class GridDensity:
    """A density tabulated on the midpoint grid of ``(0, 1)``.

    ``log_density`` is normalized so that its exponential integrates to one
    under the trapezoid rule; ``log_normalizer`` is the log of the factor
    that was divided out.
    """

    grid: np.ndarray
    log_density: np.ndarray
    log_normalizer: float

    @property
    def M(self):
        return self.grid.size

    @cached_property
    def _log_grid(self):
        return np.log(self.grid), np.log1p(-self.grid)

    def integral(self):
        return float(np.trapezoid(np.exp(self.log_density), dx=1.0 / self.M))


def midpoint_grid(M):
    return (np.arange(M) + 0.5) / M


def _log_trapezoid(log_values, dx):
    # log of trapezoid rule applied to exp(log_values), shifted by the max
    peak = float(np.max(log_values))
    scaled = np.exp(log_values - peak)
    total = scaled.sum() - 0.5 * (scaled[0] + scaled[-1])
    return peak + float(np.log(total * dx))


def _kept(datasets, exclude):
    return [d for k, d in enumerate(datasets) if exclude is None or k != exclude]


def _scale(data, normalize):
    n = np.asarray(data).size
    return 1.0 / n if normalize and n else 1.0


def exact_conjugate_posterior(prior_nat, datasets, exclude=None, likelihood="bernoulli", alpha=1.0,
                              normalize_local_loss=False):
    """Natural parameter of the exact (generalized) posterior for a conjugate model.

    ``prior + (1/alpha) * sum_k sum_{z in D_k} contrib(z)``, skipping agent
    ``exclude``.
    """
    model = expfam.get_likelihood(likelihood)
    eta = check_natural(prior_nat, name="prior_nat").copy()
    for data in _kept(datasets, exclude):
        eta = eta + model.contrib_sum(data) * (_scale(data, normalize_local_loss) / alpha)
    return eta


def grid_generalized_posterior(prior_nat, datasets, alpha=1.0, likelihood="bernoulli", M=DEFAULT_GRID_POINTS,
                               exclude=None, normalize_local_loss=False):
    """Tabulate ``p0(theta) exp(-(1/alpha) sum_k L_k(theta))`` and normalize it.

    Raises
    ------
    NonFinite
        If the summed loss is not finite somewhere on the grid.
    """
    check_positive(alpha, "alpha")
    if M < 1001:
        raise ValueError(f"M must be at least 1001, got {M}")
    model = expfam.get_likelihood(likelihood)
    theta = midpoint_grid(M)
    log_unnorm = expfam.log_pdf(prior_nat, theta)
    for data in _kept(datasets, exclude):
        data = np.asarray(data, dtype=float)
        if data.size:
            log_unnorm = log_unnorm - model.total_loss(data, theta, _scale(data, normalize_local_loss)) / alpha
    if not np.all(np.isfinite(log_unnorm)):
        raise NonFinite("generalized posterior is non-finite on the grid")
    log_z = _log_trapezoid(log_unnorm, 1.0 / M)
    return GridDensity(theta, log_unnorm - log_z, log_z)


def kl_variational_to_oracle(q_nat, oracle):
    """``KL(q || oracle)`` for a Beta ``q``.

    Closed form when ``oracle`` is a natural parameter; trapezoid quadrature
    on the oracle's grid when it is a :class:`GridDensity`.  In the latter
    case ``q`` is renormalized on the same grid so the result is a proper
    discrete KL, hence never negative.
    """
    q_nat = check_natural(q_nat, name="q_nat")
    if not isinstance(oracle, GridDensity):
        return expfam.kl(q_nat, oracle)
    dx = 1.0 / oracle.M
    log_t, log_1mt = oracle._log_grid
    log_q = q_nat[0] * log_t + q_nat[1] * log_1mt
    log_q -= _log_trapezoid(log_q, dx)
    q = np.exp(log_q)
    # q == 0 cells contribute nothing (q log q -> 0)
    integrand = q * np.where(q > 0.0, log_q - oracle.log_density, 0.0)
    value = (integrand.sum() - 0.5 * (integrand[0] + integrand[-1])) * dx
    return max(float(value), 0.0)

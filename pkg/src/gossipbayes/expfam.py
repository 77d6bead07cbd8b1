"""Beta exponential family and the likelihood models that act on it.

Natural parameters are plain ``float`` arrays of shape ``(2,)`` holding
``(a - 1, b - 1)`` for ``Beta(a, b)``; sufficient statistics are
``(log theta, log(1 - theta))`` and the base measure is 1.  Approximate local
likelihoods use the same coordinates but need not be normalizable.

Special functions come from :mod:`scipy.special`.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from ._validation import check_generator, check_natural, check_positive
from .exceptions import DomainError, SingularFim

__all__ = [
    "THETA_CLAMP",
    "FIM_MAX_COND",
    "from_shape",
    "to_shape",
    "log_partition",
    "sufficient_stats",
    "log_pdf",
    "moment_map",
    "fim",
    "fim_inverse",
    "kl",
    "sample",
    "score_in_moment_coords",
    "LikelihoodModel",
    "BernoulliLikelihood",
    "ExponentialLikelihood",
    "get_likelihood",
]

THETA_CLAMP = 1e-12
FIM_MAX_COND = 1e12


def from_shape(a, b):
    """Natural parameter of ``Beta(a, b)``."""
    return np.array([float(a) - 1.0, float(b) - 1.0])


def to_shape(eta):
    """Shape parameters ``(a, b)`` for the natural parameter ``eta``.

    No validity check is done: un-normalized local factors map to
    non-positive shapes and callers decide whether that matters.
    """
    eta = np.asarray(eta, dtype=float)
    return float(eta[0]) + 1.0, float(eta[1]) + 1.0


def log_partition(eta):
    """``log B(a, b)``."""
    a, b = to_shape(check_natural(eta))
    return float(special.betaln(a, b))


def sufficient_stats(theta):
    """``(log theta, log(1 - theta))`` stacked on the last axis.

    ``theta`` is clamped to ``[THETA_CLAMP, 1 - THETA_CLAMP]`` first so the
    statistics stay finite for draws that underflow to the boundary.
    """
    theta = np.clip(np.asarray(theta, dtype=float), THETA_CLAMP, 1.0 - THETA_CLAMP)
    return np.stack([np.log(theta), np.log1p(-theta)], axis=-1)


def log_pdf(eta, theta):
    a, b = to_shape(check_natural(eta))
    theta = np.asarray(theta, dtype=float)
    return (a - 1.0) * np.log(theta) + (b - 1.0) * np.log1p(-theta) - special.betaln(a, b)


def moment_map(eta):
    """Mean of the sufficient statistics, ``(psi(a) - psi(a+b), psi(b) - psi(a+b))``."""
    a, b = to_shape(check_natural(eta))
    total = special.digamma(a + b)
    return np.array([special.digamma(a) - total, special.digamma(b) - total])


def fim(eta):
    """Fisher information of ``Beta(a, b)`` in natural coordinates.

    This is the Hessian of ``log B(a, b)`` and the Jacobian of
    :func:`moment_map`.
    """
    a, b = to_shape(check_natural(eta))
    tri_ab = special.polygamma(1, a + b)
    return np.array(
        [
            [special.polygamma(1, a) - tri_ab, -tri_ab],
            [-tri_ab, special.polygamma(1, b) - tri_ab],
        ]
    )


def fim_inverse(eta):
    """Closed-form inverse of :func:`fim`.

    Raises
    ------
    SingularFim
        If the condition number exceeds ``FIM_MAX_COND``.  We refuse rather
        than regularize so that the failure shows up in run traces.
    """
    f = fim(eta)
    p, q, r = f[0, 0], f[0, 1], f[1, 1]
    det = p * r - q * q
    half_trace = 0.5 * (p + r)
    spread = np.hypot(0.5 * (p - r), q)
    lam_min = half_trace - spread
    lam_max = half_trace + spread
    if not det > 0 or not lam_min > 0 or lam_max / lam_min > FIM_MAX_COND:
        raise SingularFim(f"FIM at eta={np.asarray(eta)} is ill-conditioned (det={det:.3e})")
    return np.array([[r, -q], [-q, p]]) / det


def kl(eta_p, eta_q):
    """``KL(Beta(a1, b1) || Beta(a2, b2))`` in closed form.

    Exactly zero for identical arguments; tiny negative round-off is
    clipped to zero.
    """
    a1, b1 = to_shape(check_natural(eta_p, name="eta_p"))
    a2, b2 = to_shape(check_natural(eta_q, name="eta_q"))
    if a1 == a2 and b1 == b2:
        return 0.0
    value = (
        special.betaln(a2, b2)
        - special.betaln(a1, b1)
        + (a1 - a2) * special.digamma(a1)
        + (b1 - b2) * special.digamma(b1)
        + (a2 - a1 + b2 - b1) * special.digamma(a1 + b1)
    )
    return max(float(value), 0.0)


def sample(eta, rng, n):
    """Draw ``n`` values from ``Beta(a, b)``, clamped away from 0 and 1."""
    a, b = to_shape(check_natural(eta))
    check_positive(n, "n", integer=True)
    rng = check_generator(rng)
    return np.clip(rng.beta(a, b, size=n), THETA_CLAMP, 1.0 - THETA_CLAMP)


def score_in_moment_coords(eta, theta):
    """Gradient of ``log q(theta | eta)`` with respect to the moment parameter.

    Equals ``FIM(eta)^-1 (s(theta) - mu(eta))``.  ``theta`` may be a scalar
    (result shape ``(2,)``) or an array (result shape ``theta.shape + (2,)``).
    """
    centered = sufficient_stats(theta) - moment_map(eta)
    return centered @ fim_inverse(eta).T


class LikelihoodModel:
    """Per-datum loss ``l(z | theta)`` over the Beta parameter space.

    Subclasses provide vectorized losses; conjugate models additionally map
    each datum to a natural-parameter increment via :meth:`contrib`.
    """

    name = "abstract"
    conjugate = False

    def loss(self, z, theta):
        """Pointwise loss, broadcasting ``z`` against ``theta``."""
        raise NotImplementedError

    def total_loss(self, data, theta, scale=1.0):
        """``scale * sum_n l(z_n | theta)`` for every entry of ``theta``."""
        raise NotImplementedError

    def contrib(self, z):
        raise NotImplementedError(f"{self.name} likelihood is not conjugate to Beta")

    def contrib_sum(self, data):
        data = np.asarray(data, dtype=float)
        if data.size == 0:
            return np.zeros(2)
        return self.contrib(data).sum(axis=0)

    def expected_loss(self, data, eta, scale=1.0):
        """``E_{q(theta|eta)}[scale * sum_n l(z_n | theta)]`` in closed form."""
        raise NotImplementedError

    def expected_loss_grad(self, data, eta, scale=1.0):
        """Gradient of :meth:`expected_loss` with respect to ``eta``."""
        raise NotImplementedError

    def check_data(self, data):
        return np.asarray(data, dtype=float).ravel()

    def generate(self, theta, n, rng):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class BernoulliLikelihood(LikelihoodModel):
    """``p(z | theta) = theta^z (1 - theta)^(1 - z)``, conjugate to Beta."""

    name = "bernoulli"
    conjugate = True

    def loss(self, z, theta):
        z = np.asarray(z, dtype=float)
        stats = sufficient_stats(theta)
        return -(z * stats[..., 0] + (1.0 - z) * stats[..., 1])

    def contrib(self, z):
        z = np.asarray(z, dtype=float)
        return np.stack([z, 1.0 - z], axis=-1)

    def total_loss(self, data, theta, scale=1.0):
        counts = self.contrib_sum(data) * scale
        return -(sufficient_stats(theta) @ counts)

    def expected_loss(self, data, eta, scale=1.0):
        return -float(moment_map(eta) @ (self.contrib_sum(data) * scale))

    def expected_loss_grad(self, data, eta, scale=1.0):
        return -fim(eta) @ (self.contrib_sum(data) * scale)

    def check_data(self, data):
        data = super().check_data(data)
        if not np.all((data == 0.0) | (data == 1.0)):
            raise DomainError("Bernoulli data must be 0/1")
        return data

    def generate(self, theta, n, rng):
        return (rng.random(n) < theta).astype(float)


class ExponentialLikelihood(LikelihoodModel):
    """``p(z | theta) = exp(-z / theta) / theta`` for ``z >= 0``; not conjugate to Beta."""

    name = "exponential"

    def loss(self, z, theta):
        z = np.asarray(z, dtype=float)
        theta = np.clip(np.asarray(theta, dtype=float), THETA_CLAMP, 1.0 - THETA_CLAMP)
        return np.log(theta) + z / theta

    def total_loss(self, data, theta, scale=1.0):
        data = np.asarray(data, dtype=float)
        theta = np.clip(np.asarray(theta, dtype=float), THETA_CLAMP, 1.0 - THETA_CLAMP)
        return scale * (data.size * np.log(theta) + data.sum() / theta)

    def _inverse_mean(self, eta):
        a, b = to_shape(check_natural(eta))
        if a <= 1.0:
            raise DomainError(f"E[1/theta] diverges for a={a} <= 1")
        return a, b

    def expected_loss(self, data, eta, scale=1.0):
        data = np.asarray(data, dtype=float)
        a, b = self._inverse_mean(eta)
        return scale * (data.size * moment_map(eta)[0] + data.sum() * (a + b - 1.0) / (a - 1.0))

    def expected_loss_grad(self, data, eta, scale=1.0):
        data = np.asarray(data, dtype=float)
        a, b = self._inverse_mean(eta)
        # d/d(a, b) of E[1/theta] = (a + b - 1) / (a - 1)
        inv_mean_grad = np.array([-b / (a - 1.0) ** 2, 1.0 / (a - 1.0)])
        return scale * (data.size * fim(eta)[0] + data.sum() * inv_mean_grad)

    def check_data(self, data):
        data = super().check_data(data)
        if np.any(data < 0.0) or not np.all(np.isfinite(data)):
            raise DomainError("exponential data must be finite and non-negative")
        return data

    def generate(self, theta, n, rng):
        return rng.exponential(scale=theta, size=n)


_MODELS = {
    "bernoulli": BernoulliLikelihood,
    "beta-bernoulli": BernoulliLikelihood,
    "exponential": ExponentialLikelihood,
    "beta-exponential": ExponentialLikelihood,
}


def get_likelihood(model):
    """Resolve a model name (or pass through an instance)."""
    if isinstance(model, LikelihoodModel):
        return model
    try:
        return _MODELS[model]()
    except KeyError:
        raise ValueError(f"unknown likelihood {model!r}; expected one of {sorted(_MODELS)}") from None

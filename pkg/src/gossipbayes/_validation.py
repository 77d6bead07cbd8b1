"""Input validation helpers shared by the public API."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import DomainError


def check_natural(eta, *, normalizable=True, name="eta"):
    """Coerce ``eta`` to a float vector of length 2.

    With ``normalizable=True`` the Beta shapes ``eta + 1`` must be positive.
    """
    arr = np.asarray(eta, dtype=float)
    if arr.shape != (2,):
        raise DomainError(f"{name} must have shape (2,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite coordinates: {arr}")
    if normalizable and not np.all(arr > -1.0):
        raise DomainError(f"{name}={arr} is not a normalizable Beta parameter")
    return arr


def check_generator(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Accepts ``None``, an int, a :class:`~numpy.random.SeedSequence` or an
    existing Generator (returned unchanged so the caller's stream advances).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_positive(value, name, *, integer=False, allow_zero=False):
    if integer and not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return value

"""Stateless reversible instance normalization over the time axis."""

from __future__ import annotations

import numpy as np

REVIN_EPS = 1e-5


def revin_apply(x, eps: float = REVIN_EPS):
    """Normalize ``(..., T, d)`` windows per variable; returns ``(x_norm, mu, sigma)``.

    ``sigma`` is the population std floored at ``eps``; ``mu``/``sigma`` keep
    the time axis (length 1) so they broadcast against forecasts.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    mu = x.mean(axis=-2, keepdims=True)
    sigma = np.maximum(x.std(axis=-2, keepdims=True), eps)
    return (x - mu) / sigma, mu, sigma


def revin_invert(y_norm, mu, sigma):
    """Exact inverse of :func:`revin_apply` for any horizon length."""
    return np.asarray(y_norm, dtype=float) * sigma + mu

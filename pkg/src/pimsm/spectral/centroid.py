"""Energy centroid of a power-law band, ``int f P / int P`` with ``P ~ f^-beta``.

Writing ``L = ln(f_b/f_a)`` and ``E(x) = expm1(x)/x`` both integrals collapse to

    f_c = f_a * E((2 - beta) L) / E((1 - beta) L)

which is stable everywhere except where an argument is ~0. Those are the
``beta ~ 1`` and ``beta ~ 2`` special cases, evaluated by series.
"""

from __future__ import annotations

import numpy as np

from ..engine import F, Tensor
from ..errors import ParameterError

BRANCH_EPS = 1e-6


def _expm1_ratio(x: Tensor, near_zero: np.ndarray) -> Tensor:
    safe = F.where(near_zero, 1.0, x)
    general = F.div(F.expm1(safe), safe)
    series = 1.0 + x * 0.5 + F.square(x) * (1.0 / 6.0)
    return F.where(near_zero, series, general)


def energy_centroid_t(f_a, f_b, beta, eps: float = BRANCH_EPS) -> Tensor:
    """Differentiable centroid; arguments broadcast elementwise."""
    f_a, f_b, beta = F.as_tensor(f_a), F.as_tensor(f_b), F.as_tensor(beta)
    span = F.log(f_b) - F.log(f_a)
    near1 = np.abs(beta.data - 1.0) < eps
    near2 = np.abs(beta.data - 2.0) < eps
    num = _expm1_ratio((2.0 - beta) * span, near2)
    den = _expm1_ratio((1.0 - beta) * span, near1)
    return f_a * num / den


def energy_centroid(f_a, f_b, beta, eps: float = BRANCH_EPS):
    """Closed-form energy centroid of ``[f_a, f_b]`` under ``P ~ f^-beta``.

    >>> round(float(energy_centroid(0.1, 0.3, 0.0)), 12)
    0.2
    """
    fa, fb, b = (np.asarray(v, dtype=float) for v in (f_a, f_b, beta))
    if np.any(fa <= 0) or np.any(fa >= fb):
        raise ParameterError("need 0 < f_a < f_b")
    if not np.all(np.isfinite(b)):
        raise ParameterError("beta must be finite")
    out = energy_centroid_t(fa, fb, b, eps).data
    return float(out) if out.ndim == 0 else out

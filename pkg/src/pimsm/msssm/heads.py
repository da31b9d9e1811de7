"""Per-head discretized recurrences with a scalar decay per head.

Head ``j`` evolves ``h_t = exp(delta A_j) h_{t-1} + delta B_t x_t^T`` with
``h`` of shape ``(N, P)`` and emits ``y_t = C_t^T h_t``. ``B_t`` and ``C_t``
are shared across heads; the step ``delta`` is shared within a scale group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import F, Tensor
from ..errors import ParameterError

TAU_RANGE = (1.0, 100.0)  # in acquisition steps


@dataclass
class HeadParams:
    """One SSM head. ``B_proj``/``C_proj`` map the block input to ``B_t``/``C_t``."""

    A_log: float
    state_dim: int = 1
    scale_index: int = 1  # 1-based, scale 1 is the fastest
    B_proj: np.ndarray | None = None
    C_proj: np.ndarray | None = None

    @property
    def A(self) -> float:
        return -float(np.exp(self.A_log))


def sample_A_log(n: int, acquisition_step: float, rng: np.random.Generator) -> np.ndarray:
    """``log(1/tau)`` with ``tau`` log-uniform on ``TAU_RANGE`` steps."""
    lo, hi = TAU_RANGE
    tau = acquisition_step * np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    return -np.log(tau)


def group_table(H: int, K: int) -> np.ndarray:
    """Scale group (0-based) of every head: ``H/K`` consecutive heads per scale."""
    if K < 1 or H % K:
        raise ParameterError(f"H={H} heads cannot be split evenly into K={K} scales")
    return np.arange(H) // (H // K)


def init_heads(H: int, K: int, acquisition_step: float = 1.0, seed: int = 0, d_in: int | None = None,
               state_dim: int = 1) -> tuple[list[HeadParams], float]:
    """Heads with log-uniform timescales; returns them and ``a_0 = mean |A|`` at init."""
    groups = group_table(H, K)
    rng = np.random.default_rng(seed)
    a_log = sample_A_log(H, acquisition_step, rng)
    heads = []
    for j in range(H):
        bp = cp = None
        if d_in is not None:
            bp = rng.normal(scale=1 / np.sqrt(d_in), size=(d_in, state_dim))
            cp = rng.normal(scale=1 / np.sqrt(d_in), size=(d_in, state_dim))
        heads.append(HeadParams(float(a_log[j]), state_dim, int(groups[j]) + 1, bp, cp))
    return heads, float(np.mean(np.exp(a_log)))


def discretize(A, delta):
    """Zero-order-hold decay ``exp(delta A)`` and the input factor ``delta`` (``B_bar = delta B``)."""
    if isinstance(A, Tensor) or isinstance(delta, Tensor):
        return F.exp(F.as_tensor(delta) * A), delta
    A = np.asarray(A, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ParameterError("delta must be positive")
    return np.exp(delta * A), delta


def ssm_scan(head: HeadParams, x, delta: float, B=None, C=None, return_states: bool = False):
    """Unrolled recurrence for one head over ``x`` of shape ``(T, P)`` or ``(batch, T, P)``.

    ``B``/``C`` (same leading shape as ``x``, last axis ``N``) freeze the input
    projections; otherwise they are ``x @ B_proj`` and ``x @ C_proj``.
    Returns ``y`` of the shape of ``x`` (and the ``(..., T, N, P)`` states).
    """
    x = F.as_tensor(x)
    if B is None:
        if head.B_proj is None:
            raise ParameterError("head has no B projection; pass B explicitly")
        B = x @ head.B_proj
    if C is None:
        if head.C_proj is None:
            raise ParameterError("head has no C projection; pass C explicitly")
        C = x @ head.C_proj
    B, C = F.as_tensor(B), F.as_tensor(C)
    a, dB = discretize(head.A, delta)
    a, dB = float(a), float(dB)
    T = x.shape[-2]
    h = None
    ys, hs = [], []
    for t in range(T):
        inp = F.expand_dims(B[..., t, :], -1) * F.expand_dims(x[..., t, :], -2) * dB  # (..., N, P)
        h = inp if h is None else h * a + inp
        ys.append(F.sum_(F.expand_dims(C[..., t, :], -1) * h, axis=-2))
        hs.append(h)
    y = F.stack(ys, axis=-2)
    if return_states:
        return y, F.stack(hs, axis=-3)
    return y


# -- multi-head scans used by the block --------------------------------------

def multihead_scan_recurrent(A: Tensor, delta_heads: Tensor, x: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """All heads at once by explicit recurrence.

    ``A (H,)``, ``delta_heads (batch, H)``, ``x (batch, T, P)``,
    ``B``/``C`` ``(batch, T, N)`` -> ``y (batch, H, T, P)``.
    """
    decay = F.exp(delta_heads * A)  # (b, H)
    decay = F.expand_dims(F.expand_dims(decay, -1), -1)  # (b, H, 1, 1)
    dscale = F.expand_dims(F.expand_dims(delta_heads, -1), -1)
    T = x.shape[-2]
    h = None
    ys = []
    for t in range(T):
        outer = F.expand_dims(B[:, t, :], -1) * F.expand_dims(x[:, t, :], -2)  # (b, N, P)
        inp = F.expand_dims(outer, 1) * dscale  # (b, H, N, P)
        h = inp if h is None else h * decay + inp
        c = F.expand_dims(F.expand_dims(C[:, t, :], 1), -1)  # (b, 1, N, 1)
        ys.append(F.sum_(c * h, axis=-2))  # (b, H, P)
    return F.stack(ys, axis=-2)


def _lag_matrix(T: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(T)
    lag = t[:, None] - t[None, :]
    return np.maximum(lag, 0).astype(float), (lag >= 0).astype(float)


def multihead_scan_quadratic(A: Tensor, delta_heads: Tensor, x: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """Same map as :func:`multihead_scan_recurrent`, materialized as a masked ``T x T`` kernel.

    ``y_t = sum_{s<=t} (C_t . B_s) exp(delta A (t-s)) delta x_s``. Exact in
    exact arithmetic; cheaper than the unrolled loop for short sequences.
    """
    T = x.shape[-2]
    lag, mask = _lag_matrix(T)
    rate = F.expand_dims(F.expand_dims(delta_heads * A, -1), -1)  # (b, H, 1, 1)
    kernel = F.exp(rate * lag) * mask  # (b, H, T, T)
    gram = C @ F.swapaxes(B, -1, -2)  # (b, T, T)
    mix = kernel * F.expand_dims(gram, 1) * F.expand_dims(F.expand_dims(delta_heads, -1), -1)
    return mix @ F.expand_dims(x, 1)  # (b, H, T, P)


SCANS = {"recurrent": multihead_scan_recurrent, "quadratic": multihead_scan_quadratic}


def scale_aggregate(head_outputs, groups: np.ndarray, K: int | None = None, axis: int = 1):
    """Mean of head outputs within each scale group along ``axis``."""
    groups = np.asarray(groups)
    K = int(groups.max()) + 1 if K is None else K
    x = F.as_tensor(head_outputs)
    parts = []
    for k in range(K):
        idx = np.flatnonzero(groups == k)
        if len(idx) == 0:
            raise ParameterError(f"scale group {k} has no heads")
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(int(idx[0]), int(idx[-1]) + 1) if np.all(np.diff(idx) == 1) else idx
        parts.append(F.mean(x[tuple(sl)], axis=axis))
    out = F.stack(parts, axis=axis)
    return out if isinstance(head_outputs, Tensor) else out.data


def a_scale_loss(A_logs, a_0: float, weight: float = 0.1):
    """``weight * (log mean_j exp(A_log_j) - log a_0)^2`` over every head given."""
    if not a_0 > 0:
        raise ParameterError("a_0 must be positive")
    parts = [F.reshape(F.as_tensor(a), (-1,)) for a in A_logs]
    allA = F.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    val = weight * F.square(F.log(F.mean(F.exp(allA))) - np.log(a_0))
    return val

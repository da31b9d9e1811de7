"""One multi-scale block: scans, scale aggregation, cross-scale attention, gated MLP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import F, Parameter, Tensor
from ..errors import ParameterError
from .heads import SCANS, group_table, sample_A_log, scale_aggregate

NORM_EPS = 1e-6
# soft floor for the scale-state norm: states at t=0 share the factor C_0 . B_0, which can pass
# through zero, and a tiny eps would make the norm nearly singular there
STATE_NORM_EPS = 1.0


def rms_norm(x: Tensor, gain: Tensor, eps: float = NORM_EPS) -> Tensor:
    return x / F.sqrt(F.mean(F.square(x), axis=-1, keepdims=True) + eps) * gain


def cross_scale_attention(tokens, Wq, Wk, Wv, return_weights: bool = False):
    """Single-head attention among the ``K`` scale tokens of each timestep.

    ``tokens (..., K, P)`` -> ``(..., K, P_v)``; no mixing across time.
    """
    tokens = F.as_tensor(tokens)
    q, k, v = tokens @ Wq, tokens @ Wk, tokens @ Wv
    scores = (q @ F.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    weights = F.softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


@dataclass
class BlockParams:
    norm1: Tensor
    W_x: Tensor
    W_B: Tensor
    W_C: Tensor
    A_log: Tensor
    norm_s: Tensor
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor
    norm2: Tensor
    W1: Tensor
    W2: Tensor
    W3: Tensor
    H: int
    K: int

    @classmethod
    def init(cls, d_model: int, d_inter: int, H: int, K: int, state_dim: int, head_dim: int,
             acquisition_step: float, rng: np.random.Generator, prefix: str) -> "BlockParams":
        def w(shape, fan_in, name, scale=1.0):
            return Parameter(rng.normal(scale=scale / np.sqrt(fan_in), size=shape), f"{prefix}.{name}")

        return cls(
            Parameter(np.ones(d_model), f"{prefix}.norm1"),
            w((d_model, head_dim), d_model, "W_x"),
            w((d_model, state_dim), d_model, "W_B"),
            w((d_model, state_dim), d_model, "W_C"),
            Parameter(sample_A_log(H, acquisition_step, rng), f"{prefix}.A_log"),
            Parameter(np.ones(K * head_dim), f"{prefix}.norm_s"),
            w((head_dim, head_dim), head_dim, "Wq"),
            w((head_dim, head_dim), head_dim, "Wk"),
            w((head_dim, head_dim), head_dim, "Wv"),
            w((K * head_dim, d_model), K * head_dim, "Wo", 0.5),
            Parameter(np.ones(d_model), f"{prefix}.norm2"),
            w((d_model, d_inter), d_model, "W1"),
            w((d_model, d_inter), d_model, "W2"),
            w((d_inter, d_model), d_inter, "W3", 0.5),
            H, K,
        )

    def parameters(self) -> list[Tensor]:
        return [self.norm1, self.W_x, self.W_B, self.W_C, self.A_log, self.norm_s, self.Wq, self.Wk, self.Wv, self.Wo,
                self.norm2, self.W1, self.W2, self.W3]


def block_forward(x, deltas: Tensor, params: BlockParams, scan: str = "quadratic",
                  return_scales: bool = False):
    """``x (batch, T, d_model)``, per-scale steps ``deltas (batch, K)`` -> ``(batch, T, d_model)``.

    Pre-norm residual: ``x + Wo(attn(norm(aggregate(scan(norm x)))))`` followed by
    ``x + W3(silu(W1 norm x) * W2 norm x)``. The scale states are RMS-normalized
    jointly per timestep (over all ``K`` tokens), so slow heads, whose gain
    grows with their time constant, cannot saturate the attention softmax.
    """
    x = F.as_tensor(x)
    if x.ndim != 3 or x.shape[-1] != params.norm1.shape[0]:
        raise ParameterError(f"block expects (batch, T, {params.norm1.shape[0]}), got {x.shape}")
    deltas = F.as_tensor(deltas)
    if deltas.shape != (x.shape[0], params.K):
        raise ParameterError(f"deltas must be (batch, K)=({x.shape[0]}, {params.K}), got {deltas.shape}")
    groups = group_table(params.H, params.K)
    u = rms_norm(x, params.norm1)
    xs, Bt, Ct = u @ params.W_x, u @ params.W_B, u @ params.W_C
    A = -F.exp(params.A_log)
    delta_heads = F.take_along_axis(deltas, np.broadcast_to(groups, (x.shape[0], params.H)), axis=-1)
    y = SCANS[scan](A, delta_heads, xs, Bt, Ct)  # (b, H, T, P)
    scales = scale_aggregate(y, groups, params.K, axis=1)  # (b, K, T, P)
    tokens = F.swapaxes(scales, 1, 2)  # (b, T, K, P)
    b, T, K, P = tokens.shape
    tokens = F.reshape(rms_norm(F.reshape(tokens, (b, T, K * P)), params.norm_s, STATE_NORM_EPS), (b, T, K, P))
    fused = cross_scale_attention(tokens, params.Wq, params.Wk, params.Wv)
    x = x + F.reshape(fused, (b, T, K * P)) @ params.Wo
    v = rms_norm(x, params.norm2)
    x = x + (F.silu(v @ params.W1) * (v @ params.W2)) @ params.W3
    return (x, scales) if return_scales else x

"""Masked-reconstruction pretraining."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..engine import F, Tensor
from ..errors import ParameterError
from ..msssm.backbone import BackboneParams, backbone_forward, reconstruct


@dataclass(frozen=True)
class MaskSpec:
    point_prob: float = 0.10
    block_frac: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.point_prob <= 1 and 0 <= self.block_frac <= 1):
            raise ParameterError("mask probabilities must be in [0, 1]")


def make_mask(shape: tuple[int, int, int], spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(batch, T, d)`` mask (True = hidden): pointwise draws plus one contiguous block per channel."""
    n, T, d = shape
    mask = rng.random(shape) < spec.point_prob
    L = int(round(spec.block_frac * T))
    if L > 0:
        starts = rng.integers(0, T - L + 1, size=(n, d))
        t = np.arange(T)[None, :, None]
        mask |= (t >= starts[:, None, :]) & (t < starts[:, None, :] + L)
    return mask


def masked_l1(x, x_hat, mask: np.ndarray):
    """Mean absolute error over masked positions only."""
    m = mask.astype(float)
    count = m.sum()
    if count == 0:
        raise ParameterError("mask selects no positions")
    err = F.abs_(F.as_tensor(x_hat) - np.asarray(x, dtype=float)) * m
    out = F.sum_(err) / count
    return out if isinstance(x_hat, Tensor) else float(out.data)


def masked_pretrain_step(x: np.ndarray, spec: MaskSpec, params: BackboneParams, rng: np.random.Generator):
    """Loss on one batch, or ``None`` (with a warning) when the mask is empty or total.

    Masked entries are set to 0 before the backbone; the spectral branch sees
    the original ``x``.
    """
    x = np.asarray(x, dtype=float)
    mask = make_mask(x.shape, spec, rng)
    if not mask.any() or mask.all():
        warnings.warn("degenerate mask (nothing or everything hidden); batch skipped", RuntimeWarning,
                      stacklevel=2)
        return None, mask, None
    x_in = np.where(mask, 0.0, x)
    _, _, aux = backbone_forward(x_in, params, x_spec=x)
    x_hat = reconstruct(params, aux["final_hidden"])
    return masked_l1(x, x_hat, mask), mask, aux

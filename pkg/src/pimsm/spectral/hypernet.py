"""Small MLP that predicts knees and exponents from a log-binned spectrum.

Outputs are valid by construction: knee positions come from a softmax
partition of the log-frequency axis (so they are ordered and interior), and
exponents are squashed into ``BETA_BOUNDS`` with a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import F, Parameter, Tensor
from ..signalgen import BETA_BOUNDS
from .piecewise import PiecewiseFit
from .spectrum import Spectrum

N_FEATURES = 32
HIDDEN = 64
# every segment keeps at least this fraction of the log-frequency span, so the
# partition stays strictly ordered even when the softmax saturates
MIN_PIECE = 1e-3


def log_binned_features(freqs: np.ndarray, power: np.ndarray, f_min: float, f_max: float,
                        n_bins: int = N_FEATURES) -> np.ndarray:
    """Mean log power in ``n_bins`` log-spaced bins, standardized per spectrum.

    ``power`` may carry leading batch axes. Empty bins (common at low
    frequency on short series) take the log-log interpolated value at the
    bin's geometric center.
    """
    power = np.asarray(power, dtype=float)
    logf = np.log(freqs)
    logp = np.log(np.maximum(power, 1e-300))
    edges = np.linspace(np.log(f_min), np.log(f_max), n_bins + 1)
    which = np.clip(np.searchsorted(edges, logf, side="right") - 1, 0, n_bins - 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    flat = logp.reshape(-1, logp.shape[-1])
    feats = np.empty((flat.shape[0], n_bins))
    counts = np.bincount(which, minlength=n_bins)
    filled = counts > 0
    for i, row in enumerate(flat):
        sums = np.bincount(which, weights=row, minlength=n_bins)
        feats[i, filled] = sums[filled] / counts[filled]
        feats[i, ~filled] = np.interp(centers[~filled], logf, row)
    mu = feats.mean(axis=1, keepdims=True)
    sd = feats.std(axis=1, keepdims=True)
    feats = (feats - mu) / np.where(sd > 0, sd, 1.0)
    return feats.reshape(*logp.shape[:-1], n_bins)


@dataclass
class HyperNetParams:
    """Weights of the 2-hidden-layer hypernet; output is ``K-1`` knee logits + ``K`` beta logits."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    W3: Tensor
    b3: Tensor
    K: int
    f_min: float
    f_max: float

    @classmethod
    def init(cls, K: int, f_min: float, f_max: float, seed: int = 0, n_features: int = N_FEATURES,
             hidden: int = HIDDEN, out_scale: float = 0.01) -> "HyperNetParams":
        rng = np.random.default_rng(seed)
        out = 2 * K - 1
        p = cls(
            Parameter(rng.normal(scale=1.0 / np.sqrt(n_features), size=(n_features, hidden)), "hyper.W1"),
            Parameter(np.zeros(hidden), "hyper.b1"),
            Parameter(rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, hidden)), "hyper.W2"),
            Parameter(np.zeros(hidden), "hyper.b2"),
            Parameter(rng.normal(scale=out_scale / np.sqrt(hidden), size=(hidden, out)), "hyper.W3"),
            Parameter(np.zeros(out), "hyper.b3"),
            K, float(f_min), float(f_max),
        )
        # default bias: equal log-axis partition, mid-range exponents
        p.b3.data[:] = 0.0
        return p

    def parameters(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def set_bias_from_fit(self, fit: PiecewiseFit) -> None:
        """Make the bias alone reproduce ``fit`` (knees and clamped betas)."""
        span = np.log(self.f_max) - np.log(self.f_min)
        q = (np.log(fit.knees) - np.log(self.f_min)) / span
        pieces = np.diff(np.concatenate([[0.0], q, [1.0]]))
        pieces = np.maximum((pieces - MIN_PIECE) / (1.0 - self.K * MIN_PIECE), 1e-9)
        knee_logits = np.log(pieces[:-1]) - np.log(pieces[-1])
        lo, hi = BETA_BOUNDS
        frac = np.clip((fit.betas - lo) / (hi - lo), 1e-3, 1 - 1e-3)
        beta_logits = np.log(frac) - np.log1p(-frac)
        self.b3.data[:] = np.concatenate([knee_logits, beta_logits])


def hypernet_raw(params: HyperNetParams, features) -> tuple[Tensor, Tensor]:
    """Features ``(..., n_features)`` -> (log knees ``(..., K-1)``, betas ``(..., K)``)."""
    K = params.K
    features = F.as_tensor(features)
    if features.ndim == 1:
        lk, b = hypernet_raw(params, F.expand_dims(features, 0))
        return lk[0], b[0]
    h = F.tanh(features @ params.W1 + params.b1)
    h = F.tanh(h @ params.W2 + params.b2)
    out = h @ params.W3 + params.b3
    lo, hi = BETA_BOUNDS
    betas = lo + (hi - lo) * F.sigmoid(out[..., K - 1:])
    if K == 1:
        return Tensor(np.zeros((*out.shape[:-1], 0))), betas
    zero = Tensor(np.zeros((*out.shape[:-1], 1)))
    pieces = MIN_PIECE + (1.0 - K * MIN_PIECE) * F.softmax(F.concat([out[..., : K - 1], zero], axis=-1), axis=-1)
    q = F.cumsum(pieces, axis=-1)[..., : K - 1]
    lmin, lmax = np.log(params.f_min), np.log(params.f_max)
    log_knees = lmin + (lmax - lmin) * q
    return log_knees, betas


def soft_segment_model(log_knees: Tensor, betas: Tensor, logf: np.ndarray, logp,
                       softness: float = 0.1) -> tuple[Tensor, Tensor]:
    """Differentiable piecewise model with soft segment membership.

    Segment intercepts are membership-weighted least-squares given the
    exponents, so knees receive gradient through both the intercepts and the
    model blend. Returns (log model ``(..., n)``, intercepts ``(..., K)``).
    """
    logp = F.as_tensor(logp)
    K = betas.shape[-1]
    u = Tensor(logf)
    if K == 1:
        w = Tensor(np.ones((*betas.shape[:-1], 1, len(logf))))
    else:
        s = F.sigmoid((u - F.expand_dims(log_knees, -1)) * (1.0 / softness))  # (..., K-1, n)
        ones = Tensor(np.ones((*s.shape[:-2], 1, s.shape[-1])))
        zeros = Tensor(np.zeros((*s.shape[:-2], 1, s.shape[-1])))
        upper = F.concat([ones, s], axis=-2)
        lower = F.concat([s, zeros], axis=-2)
        w = upper - lower  # (..., K, n)
    b = F.expand_dims(betas, -1)
    target = F.expand_dims(logp, -2) + b * u  # y + beta_k u
    wsum = F.sum_(w, axis=-1) + 1e-12
    intercepts = F.sum_(w * target, axis=-1) / wsum
    lines = F.expand_dims(intercepts, -1) - b * u
    model = F.sum_(w * lines, axis=-2)
    return model, intercepts


def seam_loss_t(log_knees: Tensor, betas: Tensor, intercepts: Tensor) -> Tensor:
    """Per-spectrum sum of squared seam gaps ``(...,)``."""
    if betas.shape[-1] == 1:
        return Tensor(np.zeros(betas.shape[:-1]))
    left = intercepts[..., :-1] - betas[..., :-1] * log_knees
    right = intercepts[..., 1:] - betas[..., 1:] * log_knees
    return F.sum_(F.square(left - right), axis=-1)


def hypernet_forward(params: HyperNetParams, spectrum: Spectrum, softness: float = 0.1) -> PiecewiseFit:
    """Predicted fit for one spectrum (values only)."""
    feats = log_binned_features(spectrum.freqs, spectrum.power, params.f_min, params.f_max)
    log_knees, betas = hypernet_raw(params, feats[None])
    _, intercepts = soft_segment_model(log_knees, betas, spectrum.log_freqs, spectrum.log_power()[None], softness)
    return PiecewiseFit(np.exp(log_knees.data[0]), betas.data[0], intercepts.data[0], params.f_min, params.f_max)


def hypernet_fit_objective(params: HyperNetParams, freqs: np.ndarray, log_power: np.ndarray,
                           w_seam: float = 0.1, targets: tuple[np.ndarray, np.ndarray] | None = None,
                           w_align: float = 1.0, softness: float = 0.1) -> Tensor:
    """Fit loss (+ seam, + optional alignment to known log-knees/betas) for a batch ``(B, n_bins)``."""
    from .piecewise import fit_loss_t

    feats = log_binned_features(freqs, np.exp(log_power), params.f_min, params.f_max)
    log_knees, betas = hypernet_raw(params, feats)
    model, intercepts = soft_segment_model(log_knees, betas, np.log(freqs), log_power, softness)
    loss = fit_loss_t(model, log_power) + w_seam * F.mean(seam_loss_t(log_knees, betas, intercepts))
    if targets is not None:
        tk, tb = targets
        err = F.concat([log_knees - tk, betas - tb], axis=-1)
        loss = loss + w_align * F.mean(F.square(err))
    return loss


def train_hypernet(params: HyperNetParams, freqs: np.ndarray, log_power: np.ndarray, steps: int = 300,
                   lr: float = 3e-3, batch: int = 32, seed: int = 0, targets=None,
                   w_seam: float = 0.1) -> list[float]:
    """Stand-alone hypernet training on a bank of spectra ``(N, n_bins)``; returns the loss trace."""
    from ..engine import AdamW, CosineWarmup, grad

    rng = np.random.default_rng(seed)
    opt = AdamW(params.parameters(), lr=lr, weight_decay=0.0,
                schedule=CosineWarmup(lr, max(1, steps // 20), steps, lr * 0.05))
    trace = []
    n = log_power.shape[0]
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch, n), replace=False)
        tgt = None if targets is None else (targets[0][idx], targets[1][idx])
        loss = hypernet_fit_objective(params, freqs, log_power[idx], w_seam, tgt)
        opt.step(grad(loss, params.parameters()))
        trace.append(loss.item())
    return trace

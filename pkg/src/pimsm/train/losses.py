"""Composite training objective and its individual terms."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..analysis.metrics import linear_cka_t
from ..engine import F, Tensor
from ..errors import DataError, ParameterError
from ..msssm.backbone import BackboneParams, SpectralBranch, model_a_scale_loss
from ..scalemap import delta_anchor_loss_t
from ..signalgen import BETA_BOUNDS
from ..spectral.hypernet import seam_loss_t
from ..spectral.piecewise import PiecewiseFit, fit_loss_t

# order matters: the total is accumulated in this order
COMPONENTS = ("task", "fit", "seam", "delta", "A", "hyp", "beta", "drift")


@dataclass(frozen=True)
class LossWeights:
    w_fit: float = 3.0
    w_seam: float = 0.1
    lambda_delta: float = 0.1
    lambda_A: float = 0.1
    w_hyp: float = 0.3
    lambda_beta: float = 0.5
    label_smoothing: float = 0.1
    drift: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ParameterError(f"loss weight {k} must be nonnegative, got {v}")
        if self.label_smoothing > 1:
            raise ParameterError("label_smoothing must be in [0, 1]")

    def weight_of(self, component: str) -> float:
        return {"task": 1.0, "fit": self.w_fit, "seam": self.w_seam, "delta": self.lambda_delta,
                "A": self.lambda_A, "hyp": self.w_hyp, "beta": self.lambda_beta, "drift": self.drift}[component]

    def auxiliary_off(self) -> "LossWeights":
        """Same task settings with every auxiliary weight zeroed."""
        return replace(self, w_fit=0.0, w_seam=0.0, lambda_delta=0.0, lambda_A=0.0, w_hyp=0.0,
                       lambda_beta=0.0, drift=0.0)


def task_loss_classification(logits, labels, eps: float = 0.1) -> Tensor:
    """Cross-entropy against ``(1-eps) onehot + eps/C``, averaged over the batch."""
    logits = F.as_tensor(logits)
    labels = np.asarray(labels)
    C = logits.shape[-1]
    if C < 2:
        raise ParameterError("need at least two classes")
    if labels.shape != logits.shape[:-1]:
        raise DataError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= C) or not np.all(np.equal(np.mod(labels, 1), 0)):
        raise DataError(f"labels must be integers in [0, {C})")
    target = np.full(logits.shape, eps / C)
    np.put_along_axis(target, labels.astype(int)[..., None], 1.0 - eps + eps / C, axis=-1)
    return -F.mean(F.sum_(F.log_softmax(logits, axis=-1) * target, axis=-1))


def task_loss_mse(pred, target) -> Tensor:
    return F.mean(F.square(F.as_tensor(pred) - np.asarray(target, dtype=float)))


def extreme_beta_loss(betas, bounds=BETA_BOUNDS, margin: float = 0.2):
    """``sum_k relu(beta - (hi - margin))^2 + relu((lo + margin) - beta)^2``, averaged over leading axes."""
    lo, hi = bounds
    b = F.as_tensor(betas)
    over = F.relu(b - (hi - margin))
    under = F.relu((lo + margin) - b)
    per = F.sum_(F.square(over) + F.square(under), axis=-1)
    out = F.mean(per) if per.ndim else per
    return out if isinstance(betas, Tensor) else float(out.data)


def hyp_alignment_loss(hyper, offline):
    """Mean squared difference over ``(log knees, betas)`` of two fits with the same ``K``.

    Accepts two :class:`PiecewiseFit` objects (returns a float) or two
    ``(log_knees, betas)`` tuples of tensors/arrays with batch axes.
    """
    if isinstance(hyper, PiecewiseFit) and isinstance(offline, PiecewiseFit):
        if hyper.K != offline.K:
            raise ParameterError(f"K mismatch: {hyper.K} vs {offline.K}")
        a = np.concatenate([np.log(hyper.knees), hyper.betas])
        b = np.concatenate([np.log(offline.knees), offline.betas])
        return float(np.mean((a - b) ** 2))
    (lk_a, b_a), (lk_b, b_b) = hyper, offline
    if np.shape(b_a)[-1] != np.shape(b_b)[-1]:
        raise ParameterError("K mismatch")
    a = F.concat([F.as_tensor(lk_a), F.as_tensor(b_a)], axis=-1)
    b = F.concat([F.as_tensor(lk_b), F.as_tensor(b_b)], axis=-1)
    return F.mean(F.square(a - b))


def drift_intervention_loss(z_full, z_trunc, lam: float = 1.0):
    """``lam * (1 - linear CKA)`` between paired embedding batches."""
    if np.shape(z_full)[0] < 2:
        raise ParameterError("drift loss needs a batch of at least two")
    val = lam * (1.0 - linear_cka_t(F.as_tensor(z_full), F.as_tensor(z_trunc)))
    if isinstance(z_full, Tensor) or isinstance(z_trunc, Tensor):
        return val
    return float(val.data)


def total_loss(components: dict[str, Tensor], weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum in :data:`COMPONENTS` order; returns the total and the weighted per-term values.

    Terms with zero weight (or absent) are skipped entirely, so they cannot
    perturb the task gradient.
    """
    total = None
    logged = {}
    for name in COMPONENTS:
        w = weights.weight_of(name)
        term = components.get(name)
        if term is None or w == 0.0:
            logged[name] = 0.0
            continue
        weighted = term if w == 1.0 else term * w
        logged[name] = float(weighted.data)
        total = weighted if total is None else total + weighted
    if total is None:
        raise ParameterError("no active loss component")
    return total, logged


def spectral_components(params: BackboneParams, branch: SpectralBranch | None, deltas: Tensor,
                        weights: LossWeights, offline: tuple[np.ndarray, np.ndarray] | None) -> dict:
    """Raw (unweighted) auxiliary terms for one batch."""
    c = params.config
    out = {}
    if weights.lambda_delta:
        out["delta"] = delta_anchor_loss_t(deltas, c.acquisition_step)
    if weights.lambda_A:
        out["A"] = model_a_scale_loss(params, weight=1.0)
    if branch is None:
        return out
    if weights.w_fit:
        out["fit"] = fit_loss_t(branch.model, branch.log_power)
    if weights.w_seam:
        out["seam"] = F.mean(seam_loss_t(branch.log_knees, branch.betas, branch.intercepts))
    if weights.w_hyp and offline is not None:
        out["hyp"] = hyp_alignment_loss((branch.consensus_log_knees, branch.consensus_betas), offline)
    if weights.lambda_beta:
        out["beta"] = extreme_beta_loss(branch.betas)
    return out

"""Supervised training loop, evaluation, and metric logging."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine import AdamW, CosineWarmup, grad
from ..errors import ContractError, NumericError, ParameterError
from ..msssm.backbone import BackboneParams, backbone_forward
from ..msssm.revin import revin_apply
from ..signalgen import BETA_BOUNDS, LabeledSequenceSet
from ..spectral.piecewise import PiecewiseFit, init_fit
from ..spectral.spectrum import Spectrum, periodogram_array
from .losses import (
    COMPONENTS,
    LossWeights,
    drift_intervention_loss,
    spectral_components,
    task_loss_classification,
    task_loss_mse,
    total_loss,
)
from .masking import MaskSpec, masked_pretrain_step


# full-size optimizer settings; "desk" keeps the dataclass defaults
TRAIN_PRESETS = {
    "desk": {},
    "classification": {"epochs": 35, "lr": 1e-3, "weight_decay": 0.1, "batch_size": 32},
    "forecasting": {"epochs": 30, "lr": 5e-5, "weight_decay": 0.05, "batch_size": 2048,
                    "warmup_frac": 5 / 30, "early_stop_patience": 5},
}


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 3e-3
    weight_decay: float = 0.1
    warmup_frac: float = 0.1
    min_lr_frac: float = 0.05
    max_grad_norm: float = 1.0
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    view_len: int | None = None  # backbone sees the first view_len samples
    spectral_context: str = "full"  # full | view
    drift_view_len: int | None = None  # truncated view for the drift intervention
    early_stop_patience: int | None = None
    init_hyper_from_offline: bool = True
    log_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ParameterError("epochs, batch_size and lr must be positive")
        if self.spectral_context not in ("full", "view"):
            raise ParameterError("spectral_context must be 'full' or 'view'")

    @classmethod
    def from_preset(cls, name: str = "desk", **overrides) -> "TrainConfig":
        if name not in TRAIN_PRESETS:
            raise ParameterError(f"unknown training preset {name!r}; expected one of {sorted(TRAIN_PRESETS)}")
        return cls(**{**TRAIN_PRESETS[name], **overrides})


@dataclass
class TrainResult:
    params: BackboneParams
    history: list[dict]
    step_log: list[dict]
    best_val: float | None


def view(x: np.ndarray, view_len: int | None) -> np.ndarray:
    return x if view_len is None else x[:, :view_len]


def offline_consensus_fits(x_spec: np.ndarray, f_min: float, f_max: float, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sequence consensus of per-channel grid fits: ``(N, K-1)`` log knees and ``(N, K)`` betas.

    Exponents are clamped to the admissible range, since they serve as
    targets for a bounded predictor.
    """
    freqs, power = periodogram_array(np.swapaxes(np.asarray(x_spec, float), -1, -2), f_min, f_max)
    floor = 1e-12 * np.maximum(power.mean(axis=-1, keepdims=True), 1e-300)
    power = np.maximum(power, floor)
    n, d, _ = power.shape
    lk = np.zeros((n, d, K - 1))
    betas = np.zeros((n, d, K))
    for i in range(n):
        for j in range(d):
            fit = init_fit(Spectrum(freqs, power[i, j], f_min, f_max), K)
            lk[i, j] = np.log(fit.knees)
            betas[i, j] = fit.betas
    return lk.mean(axis=1), np.clip(betas.mean(axis=1), *BETA_BOUNDS)


def _is_classify(params: BackboneParams) -> bool:
    return params.config.task == "classify"


def _prepare(params: BackboneParams, x: np.ndarray, y, cfg: TrainConfig):
    """Backbone input, spectral context and (normalized) targets for one batch."""
    x_view = view(x, cfg.view_len)
    x_spec = x if cfg.spectral_context == "full" else x_view
    if _is_classify(params):
        return x_view, x_spec, y, None
    x_norm, mu, sigma = revin_apply(x_view)
    return x_norm, x_spec, (np.asarray(y, float) - mu) / sigma, (mu, sigma)


def batch_objective(params: BackboneParams, x: np.ndarray, y, cfg: TrainConfig,
                    offline: tuple[np.ndarray, np.ndarray] | None = None):
    """Total loss tensor, weighted component log, and forward auxiliaries for one batch."""
    w = cfg.weights
    x_in, x_spec, target, _ = _prepare(params, x, y, cfg)
    latents, pred, aux = backbone_forward(x_in, params, x_spec=x_spec)
    comps = {}
    if _is_classify(params):
        comps["task"] = task_loss_classification(pred, target, w.label_smoothing)
    else:
        comps["task"] = task_loss_mse(pred, target)
    if params.config.spectral_pooling == "batch" and offline is not None:
        offline = tuple(np.broadcast_to(o.mean(axis=0, keepdims=True), o.shape) for o in offline)
    comps.update(spectral_components(params, aux["spectral"], aux["deltas"], w, offline))
    if w.drift and cfg.drift_view_len is not None:
        x_tr = view(x, cfg.drift_view_len)
        if not _is_classify(params):
            x_tr = revin_apply(x_tr)[0]
        z_tr = backbone_forward(x_tr, params, x_spec=x_spec)[0].z
        comps["drift"] = drift_intervention_loss(latents.z, z_tr, 1.0)
    total, logged = total_loss(comps, w)
    return total, logged, aux


def evaluate(params: BackboneParams, ds: LabeledSequenceSet, view_len: int | None = None,
             spectral_context: str = "full", batch_size: int = 256) -> dict:
    """Task metric (accuracy or MSE in data units) and pooled embeddings over a dataset."""
    cfg = TrainConfig(view_len=view_len, spectral_context=spectral_context)
    zs, preds = [], []
    for s in range(0, ds.n, batch_size):
        x = ds.sequences[s:s + batch_size]
        x_in, x_spec, _, stats = _prepare(params, x, None if _is_classify(params) else ds.labels[s:s + batch_size],
                                          cfg)
        lat, pred, _ = backbone_forward(x_in, params, x_spec=x_spec)
        p = pred.data
        if stats is not None:
            p = p * stats[1] + stats[0]
        zs.append(lat.z.data)
        preds.append(p)
    z = np.concatenate(zs)
    pred = np.concatenate(preds)
    if _is_classify(params):
        metric = float(np.mean(np.argmax(pred, axis=-1) == ds.labels))
        return {"metric": metric, "accuracy": metric, "z": z, "pred": pred}
    mse = float(np.mean((pred - ds.labels) ** 2))
    return {"metric": mse, "mse": mse, "mae": float(np.mean(np.abs(pred - ds.labels))), "z": z, "pred": pred}


def _seed_hypernet(params: BackboneParams, lk: np.ndarray, betas: np.ndarray) -> None:
    c = params.config
    fit = PiecewiseFit(np.exp(lk.mean(axis=0)), betas.mean(axis=0), np.zeros(c.K), c.f_min, c.f_max)
    params.hyper.set_bias_from_fit(fit)


def _A_summary(params: BackboneParams) -> dict:
    a_log = np.concatenate([b.A_log.data for b in params.blocks])
    return {"mean_log_abs_A": float(np.mean(a_log)), "log_mean_abs_A": float(np.log(np.mean(np.exp(a_log))))}


def train_loop(params: BackboneParams, train: LabeledSequenceSet, val: LabeledSequenceSet | None,
               cfg: TrainConfig, offline: tuple[np.ndarray, np.ndarray] | None = None) -> TrainResult:
    """Mini-batch AdamW training; deterministic given ``cfg.seed`` and the initial parameters.

    ``offline`` holds precomputed per-sequence grid fits of the training set
    (computed here when the spectral branch is active and none is given).
    """
    c = params.config
    w = cfg.weights
    rng = np.random.default_rng(cfg.seed)
    spectral = c.delta_mode == "spectral"
    if spectral and offline is None and (w.w_hyp or cfg.init_hyper_from_offline):
        x_spec_all = train.sequences if cfg.spectral_context == "full" else view(train.sequences, cfg.view_len)
        offline = offline_consensus_fits(x_spec_all, c.f_min, c.f_max, c.K)
    steps_per_epoch = math.ceil(train.n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    opt = AdamW(params.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay, max_grad_norm=cfg.max_grad_norm,
                schedule=CosineWarmup(cfg.lr, int(cfg.warmup_frac * total_steps), total_steps,
                                      cfg.lr * cfg.min_lr_frac),
                no_decay=params.no_decay_names())
    history, step_log = [], []
    best, best_state, stale = None, None, 0
    plist = params.parameters()
    for epoch in range(cfg.epochs):
        order = rng.permutation(train.n)
        sums = dict.fromkeys(COMPONENTS, 0.0)
        sums["total"] = 0.0
        deltas_seen = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x, y = train.sequences[idx], train.labels[idx]
            batch_offline = None if offline is None else (offline[0][idx], offline[1][idx])
            if spectral and cfg.init_hyper_from_offline and epoch == 0 and b == 0:
                _seed_hypernet(params, *batch_offline)
            loss, logged, aux = batch_objective(params, x, y, cfg, batch_offline)
            total = float(loss.data)
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch} step {b}: components {logged}")
            if abs(total - sum(logged.values())) > 1e-12 * max(1.0, abs(total)):
                raise ContractError(f"component log does not sum to total: {total} vs {logged}")
            norm = opt.step(grad(loss, plist))
            row = {"epoch": epoch, "step": len(step_log), "total": total, **logged, "grad_norm": norm}
            step_log.append(row)
            for k in COMPONENTS:
                sums[k] += logged[k]
            sums["total"] += total
            deltas_seen.append(aux["deltas"].data.mean(axis=0))
        dmean = np.mean(deltas_seen, axis=0)
        base = {f"delta_{k + 1}": float(dmean[k]) for k in range(c.K)}
        base.update(_A_summary(params))
        train_eval = evaluate(params, train, cfg.view_len, cfg.spectral_context)
        history.append({"epoch": epoch, "split": "train", "metric": train_eval["metric"],
                        **{k: v / steps_per_epoch for k, v in sums.items()}, **base})
        if val is not None:
            val_eval = evaluate(params, val, cfg.view_len, cfg.spectral_context)
            history.append({"epoch": epoch, "split": "val", "metric": val_eval["metric"], **base})
            score = val_eval["metric"] if _is_classify(params) else -val_eval["metric"]
            if best is None or score > best:
                best, stale = score, 0
                best_state = [p.data.copy() for p in plist]
            else:
                stale += 1
                if cfg.early_stop_patience is not None and stale >= cfg.early_stop_patience:
                    break
    if cfg.early_stop_patience is not None and best_state is not None:
        for p, s in zip(plist, best_state):
            p.data[...] = s
    if cfg.log_path:
        write_metric_log(history, cfg.log_path)
    best_val = None if best is None else (best if _is_classify(params) else -best)
    return TrainResult(params, history, step_log, best_val)


def write_metric_log(history: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = []
    for row in history:
        keys += [k for k in row if k not in keys]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, restval="")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def pretrain_loop(params: BackboneParams, data: LabeledSequenceSet, epochs: int = 5, batch_size: int = 32,
                  lr: float = 1e-3, spec: MaskSpec = MaskSpec(), seed: int = 0) -> list[float]:
    """Masked-reconstruction pretraining; returns per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    mask_rng = np.random.default_rng(spec.seed)
    steps = math.ceil(data.n / batch_size) * epochs
    opt = AdamW(params.parameters(), lr=lr, weight_decay=0.1,
                schedule=CosineWarmup(lr, max(1, steps // 10), steps, lr * 0.05), no_decay=params.no_decay_names())
    plist = params.parameters()
    losses = []
    for _ in range(epochs):
        order = rng.permutation(data.n)
        vals = []
        for b in range(0, data.n, batch_size):
            loss, _, _ = masked_pretrain_step(data.sequences[order[b:b + batch_size]], spec, params, mask_rng)
            if loss is None:
                continue
            if not np.isfinite(loss.data):
                raise NumericError("non-finite pretraining loss")
            opt.step(grad(loss, plist))
            vals.append(float(loss.data))
        losses.append(float(np.mean(vals)) if vals else float("nan"))
    return losses

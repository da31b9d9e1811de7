"""Composite loss, training loops and masked pretraining."""

from .losses import (
    COMPONENTS,
    LossWeights,
    drift_intervention_loss,
    extreme_beta_loss,
    hyp_alignment_loss,
    spectral_components,
    task_loss_classification,
    task_loss_mse,
    total_loss,
)
from .loop import (
    TRAIN_PRESETS,
    TrainConfig,
    TrainResult,
    batch_objective,
    evaluate,
    offline_consensus_fits,
    pretrain_loop,
    train_loop,
    view,
    write_metric_log,
)
from .masking import MaskSpec, make_mask, masked_l1, masked_pretrain_step

__all__ = [
    "COMPONENTS", "LossWeights", "drift_intervention_loss", "extreme_beta_loss", "hyp_alignment_loss",
    "spectral_components", "task_loss_classification", "task_loss_mse", "total_loss",
    "TRAIN_PRESETS", "TrainConfig", "TrainResult", "batch_objective", "evaluate", "offline_consensus_fits", "pretrain_loop",
    "train_loop", "view", "write_metric_log", "MaskSpec", "make_mask", "masked_l1", "masked_pretrain_step",
]

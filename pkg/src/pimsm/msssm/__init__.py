"""Multi-scale state-space backbone."""

from .backbone import (
    CHECKPOINT_SCHEMA,
    DIM_PRESETS,
    PRESET_DELTA_MODE,
    BackboneConfig,
    BackboneParams,
    LatentStates,
    SpectralBranch,
    backbone_forward,
    compute_deltas,
    model_a_scale_loss,
    reconstruct,
    spectral_inputs,
)
from .blocks import BlockParams, block_forward, cross_scale_attention, rms_norm
from .heads import (
    HeadParams,
    a_scale_loss,
    discretize,
    group_table,
    init_heads,
    multihead_scan_quadratic,
    multihead_scan_recurrent,
    sample_A_log,
    scale_aggregate,
    ssm_scan,
)
from .revin import REVIN_EPS, revin_apply, revin_invert

__all__ = [
    "BackboneConfig", "BackboneParams", "LatentStates", "SpectralBranch", "backbone_forward",
    "compute_deltas", "model_a_scale_loss", "reconstruct", "spectral_inputs", "CHECKPOINT_SCHEMA",
    "DIM_PRESETS", "PRESET_DELTA_MODE", "BlockParams", "block_forward", "cross_scale_attention", "rms_norm",
    "HeadParams", "a_scale_loss", "discretize", "group_table", "init_heads", "multihead_scan_quadratic",
    "multihead_scan_recurrent", "sample_A_log", "scale_aggregate", "ssm_scan",
    "REVIN_EPS", "revin_apply", "revin_invert",
]

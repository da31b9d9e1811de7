from .centroid import energy_centroid, energy_centroid_t
from .hypernet import (
    HyperNetParams,
    hypernet_forward,
    hypernet_raw,
    log_binned_features,
    seam_loss_t,
    soft_segment_model,
)
from .piecewise import (
    PiecewiseFit,
    consensus_fit,
    eval_piecewise,
    fit_loss,
    fit_loss_t,
    grid_residuals,
    init_fit,
    seam_loss,
)
from .spectrum import Spectrum, channel_spectra, periodogram, periodogram_array

__all__ = [
    "Spectrum", "periodogram", "periodogram_array", "channel_spectra",
    "PiecewiseFit", "init_fit", "eval_piecewise", "fit_loss", "fit_loss_t", "seam_loss",
    "consensus_fit", "grid_residuals",
    "energy_centroid", "energy_centroid_t",
    "HyperNetParams", "hypernet_forward", "hypernet_raw", "log_binned_features",
    "soft_segment_model", "seam_loss_t",
]

"""Theory checks (kernel mismatch, mixture approximation) and representation metrics."""

from .drift import drift_report, embed
from .kernels import (
    Lemma1Report,
    MixtureFit,
    approximation_rate_study,
    causal_response,
    extract_kernel,
    fit_exp_mixture,
    l1_mismatch,
    verify_lemma1,
)
from .metrics import dcor, drift_metrics, latent_l2_drift, linear_cka, linear_cka_t

__all__ = [
    "drift_report", "embed", "Lemma1Report", "MixtureFit", "approximation_rate_study", "causal_response",
    "extract_kernel", "fit_exp_mixture", "l1_mismatch", "verify_lemma1", "dcor", "drift_metrics",
    "latent_l2_drift", "linear_cka", "linear_cka_t",
]

"""Representation drift between two conditions of the same inputs."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from ..msssm.backbone import BackboneParams, backbone_forward
from ..msssm.revin import revin_apply
from .metrics import drift_metrics


def embed(params: BackboneParams, x: np.ndarray, x_spec: np.ndarray | None = None,
          batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Pooled embeddings ``z`` and raw predictions, computed in batches (RevIN for forecasting)."""
    x = np.asarray(x, dtype=float)
    x_spec = x if x_spec is None else np.asarray(x_spec, dtype=float)
    zs, preds = [], []
    for s in range(0, len(x), batch_size):
        xb = x[s:s + batch_size]
        if params.config.task == "forecast":
            xb = revin_apply(xb)[0]
        lat, pred, _ = backbone_forward(xb, params, x_spec=x_spec[s:s + batch_size])
        zs.append(lat.z.data)
        preds.append(pred.data)
    return np.concatenate(zs), np.concatenate(preds)


def _accuracy(pred: np.ndarray, labels) -> float | None:
    if labels is None or pred.ndim != 2:
        return None
    return float(np.mean(np.argmax(pred, axis=-1) == np.asarray(labels)))


def drift_report(params: BackboneParams, x_a: np.ndarray, x_b: np.ndarray, labels=None,
                 params_b: BackboneParams | None = None, x_spec: np.ndarray | None = None,
                 batch_size: int = 256) -> dict:
    """Similarity and drift between embeddings of paired inputs under two conditions.

    ``x_a`` and ``x_b`` are views of the same items (e.g. full and truncated).
    Condition ``b`` is embedded by ``params_b`` when given, otherwise by the
    same model. ``x_spec`` is the spectral context shared by both conditions
    (defaults to each condition's own input).
    """
    x_a, x_b = np.asarray(x_a, dtype=float), np.asarray(x_b, dtype=float)
    if x_a.shape[0] != x_b.shape[0]:
        raise ParameterError(f"unpaired inputs: {x_a.shape[0]} vs {x_b.shape[0]} items")
    z_a, p_a = embed(params, x_a, x_spec if x_spec is not None else x_a, batch_size)
    z_b, p_b = embed(params_b or params, x_b, x_spec if x_spec is not None else x_b, batch_size)
    report = drift_metrics(z_a, z_b)
    report["metric_a"] = _accuracy(p_a, labels)
    report["metric_b"] = _accuracy(p_b, labels)
    return report

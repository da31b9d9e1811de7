"""Representation similarity (linear CKA, distance correlation) and drift reports."""

from __future__ import annotations

import numpy as np

from ..engine import F, Tensor
from ..errors import ParameterError


def _check_pair(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    if X.shape[0] != Y.shape[0]:
        raise ParameterError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[0] < 2:
        raise ParameterError("need at least two rows")
    return X, Y


def linear_cka(X, Y) -> float:
    """``||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)`` with column-centered inputs."""
    X, Y = _check_pair(X, Y)
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    den = np.linalg.norm(Xc.T @ Xc) * np.linalg.norm(Yc.T @ Yc)
    if den == 0:
        return 0.0
    return float(np.linalg.norm(Xc.T @ Yc) ** 2 / den)


def linear_cka_t(X: Tensor, Y: Tensor, eps: float = 1e-12) -> Tensor:
    """Differentiable linear CKA for ``(n, p)`` and ``(n, q)`` tensors."""
    X, Y = F.as_tensor(X), F.as_tensor(Y)
    if X.shape[0] != Y.shape[0]:
        raise ParameterError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[0] < 2:
        raise ParameterError("CKA needs a batch of at least two")
    Xc = X - F.mean(X, axis=0, keepdims=True)
    Yc = Y - F.mean(Y, axis=0, keepdims=True)
    num = F.sum_(F.square(F.swapaxes(Xc, 0, 1) @ Yc))
    xx = F.sqrt(F.sum_(F.square(F.swapaxes(Xc, 0, 1) @ Xc)) + eps)
    yy = F.sqrt(F.sum_(F.square(F.swapaxes(Yc, 0, 1) @ Yc)) + eps)
    return num / (xx * yy)


def _double_centered(D: np.ndarray) -> np.ndarray:
    return D - D.mean(axis=0, keepdims=True) - D.mean(axis=1, keepdims=True) + D.mean()


def _pairwise(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    return np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))


def dcor(X, Y) -> float:
    """Distance correlation (V-statistic), in ``[0, 1]``; 0 if either distance variance vanishes."""
    X, Y = _check_pair(X, Y)
    A = _double_centered(_pairwise(X))
    B = _double_centered(_pairwise(Y))
    dcov2 = np.mean(A * B)
    dvar = np.mean(A * A) * np.mean(B * B)
    if dvar <= 0:
        return 0.0
    return float(np.sqrt(max(dcov2, 0.0) / np.sqrt(dvar)))


def latent_l2_drift(Z1, Z2) -> float:
    Z1, Z2 = _check_pair(Z1, Z2)
    if Z1.shape != Z2.shape:
        raise ParameterError("paired embeddings must have the same shape")
    return float(np.mean(np.linalg.norm(Z1 - Z2, axis=1)))


def drift_metrics(z_a, z_b) -> dict:
    """Similarity, drift (``1 - similarity``) and mean latent l2 distance between paired embeddings."""
    cka = linear_cka(z_a, z_b)
    dc = dcor(z_a, z_b)
    return {"cka": cka, "dcor": dc, "drift_cka": 1.0 - cka, "drift_dcor": 1.0 - dc,
            "l2_drift": latent_l2_drift(z_a, z_b)}

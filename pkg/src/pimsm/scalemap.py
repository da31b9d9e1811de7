"""Map a piecewise spectral fit to ordered per-scale discretization steps.

Band coordinates live on the log-frequency axis: ``p`` is where a band's
geometric midpoint sits within ``[f_min, f_max]`` and ``t`` is where the
energy centroid sits within its own band. ``m = (1-w) p + w t`` is then
mapped affinely onto ``[delta_min, delta_max]``; higher-frequency bands get
larger steps. Every function here has a tensor twin (``*_t``) so the steps
stay differentiable w.r.t. hypernet outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import F, Tensor
from .errors import ParameterError
from .spectral.centroid import energy_centroid_t
from .spectral.piecewise import PiecewiseFit

DEFAULT_W = 0.3
MODES = ("per-band", "global")


def default_delta_bounds(acquisition_step: float = 1.0) -> tuple[float, float]:
    return 0.1 * acquisition_step, 10.0 * acquisition_step


@dataclass
class ScaleAssignment:
    """Per-scale steps ordered fast -> slow (``deltas[0]`` is the largest)."""

    deltas: np.ndarray
    centroids: np.ndarray
    bands: list[tuple[float, float]]
    band_order: np.ndarray  # band index feeding scale k
    mode: str = "per-band"
    w: float = DEFAULT_W
    delta_min: float = 0.1
    delta_max: float = 10.0
    acquisition_step: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.deltas)

    def check(self, atol: float = 1e-12) -> None:
        """Raise if any ordering/bounds/containment invariant is violated."""
        d = self.deltas
        if np.any(np.diff(d) > atol):
            raise ParameterError(f"deltas not descending: {d}")
        if np.any(d < self.delta_min - atol) or np.any(d > self.delta_max + atol):
            raise ParameterError(f"deltas outside [{self.delta_min}, {self.delta_max}]: {d}")
        for c, (a, b) in zip(self.centroids, self.bands):
            if not a - atol <= c <= b + atol:
                raise ParameterError(f"centroid {c} outside band ({a}, {b})")
        c_by_scale = self.centroids[self.band_order]
        if np.any(np.diff(c_by_scale) > atol):
            raise ParameterError("scale order does not follow centroid order")

    def effective_timescales(self, A) -> np.ndarray:
        """``Delta / |A|`` for each scale against each decay rate in ``A`` -> ``(K, len(A))``."""
        return np.stack([effective_timescale(dk, np.asarray(A)) for dk in self.deltas])

    def to_dict(self) -> dict:
        return {
            "deltas": self.deltas.tolist(),
            "centroids": self.centroids.tolist(),
            "bands": [list(b) for b in self.bands],
            "band_order": self.band_order.tolist(),
            "mode": self.mode,
            "w": self.w,
            "delta_min": self.delta_min,
            "delta_max": self.delta_max,
            "acquisition_step": self.acquisition_step,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleAssignment":
        return cls(np.asarray(d["deltas"]), np.asarray(d["centroids"]), [tuple(b) for b in d["bands"]],
                   np.asarray(d["band_order"]), d["mode"], d["w"], d["delta_min"], d["delta_max"],
                   d.get("acquisition_step", 1.0))


# -- tensor core -------------------------------------------------------------

def band_coordinates_t(log_edges: Tensor, log_centroids: Tensor) -> tuple[Tensor, Tensor]:
    """``log_edges (..., K+1)``, ``log_centroids (..., K)`` -> ``(p, t)`` each ``(..., K)``."""
    lo, hi = log_edges[..., :-1], log_edges[..., 1:]
    lmin, lmax = log_edges[..., :1], log_edges[..., -1:]
    mid = (lo + hi) * 0.5
    p = F.clip((mid - lmin) / (lmax - lmin), 0.0, 1.0)
    t = F.clip((log_centroids - lo) / (hi - lo), 0.0, 1.0)
    return p, t


def map_delta_t(p: Tensor, t: Tensor, w: float, delta_min: float, delta_max: float,
                mode: str = "per-band", global_pos: Tensor | None = None) -> Tensor:
    if mode == "per-band":
        m = p * (1.0 - w) + t * w
    elif mode == "global":
        if global_pos is None:
            raise ParameterError("global mode needs the centroid's global log position")
        m = global_pos
    else:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    return delta_min + (delta_max - delta_min) * m


def enforce_order_t(deltas: Tensor, delta_min: float, delta_max: float) -> tuple[Tensor, np.ndarray]:
    """Sort descending along the last axis (stable) and clamp to the bounds."""
    order = np.argsort(-deltas.data, axis=-1, kind="stable")
    return F.clip(F.take_along_axis(deltas, order, axis=-1), delta_min, delta_max), order


def deltas_from_fit_t(log_knees: Tensor, betas: Tensor, f_min: float, f_max: float,
                      w: float = DEFAULT_W, mode: str = "per-band",
                      delta_min: float = 0.1, delta_max: float = 10.0) -> tuple[Tensor, dict]:
    """Differentiable steps from hypernet outputs ``(..., K-1)``/``(..., K)``.

    Returns the ordered steps ``(..., K)`` and a dict with the intermediate
    centroids, band coordinates and the band order, all as tensors/arrays.
    """
    _check_w(w)
    batch = betas.shape[:-1]
    lmin = Tensor(np.full((*batch, 1), np.log(f_min)))
    lmax = Tensor(np.full((*batch, 1), np.log(f_max)))
    log_edges = F.concat([lmin, log_knees, lmax], axis=-1)
    edges = F.exp(log_edges)
    centroids = energy_centroid_t(edges[..., :-1], edges[..., 1:], betas)
    log_c = F.log(centroids)
    p, t = band_coordinates_t(log_edges, log_c)
    g = F.clip((log_c - np.log(f_min)) / (np.log(f_max) - np.log(f_min)), 0.0, 1.0)
    raw = map_delta_t(p, t, w, delta_min, delta_max, mode, g)
    ordered, order = enforce_order_t(raw, delta_min, delta_max)
    return ordered, {"centroids": centroids, "p": p, "t": t, "raw": raw, "order": order}


def delta_anchor_loss_t(deltas: Tensor, acquisition_step: float, weight: float = 1.0) -> Tensor:
    return weight * F.mean(F.square(F.log(deltas * (1.0 / acquisition_step))))


# -- value-level API -----------------------------------------------------------

def _check_w(w: float) -> None:
    if not 0.0 <= w <= 1.0:
        raise ParameterError(f"mixing weight w must be in [0, 1], got {w}")


def band_coordinates(fit: PiecewiseFit, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Log-axis band position ``p`` and within-band centroid position ``t``, clamped to [0, 1]."""
    edges = fit.edges
    if np.any(np.diff(edges) <= 0):
        raise ParameterError("degenerate band")
    centroids = np.asarray(centroids, dtype=float)
    p, t = band_coordinates_t(Tensor(np.log(edges)), Tensor(np.log(centroids)))
    return p.data, t.data


def map_delta(p, t, w: float = DEFAULT_W, delta_min: float = 0.1, delta_max: float = 10.0,
              mode: str = "per-band", global_pos=None) -> np.ndarray:
    """Affine map of the mixed coordinate onto ``[delta_min, delta_max]`` (pre-ordering)."""
    _check_w(w)
    if not 0 < delta_min < delta_max:
        raise ParameterError("need 0 < delta_min < delta_max")
    g = None if global_pos is None else Tensor(np.asarray(global_pos, dtype=float))
    return map_delta_t(Tensor(np.asarray(p, float)), Tensor(np.asarray(t, float)), w, delta_min,
                       delta_max, mode, g).data


def enforce_order(deltas, centroids, delta_min: float = 0.1, delta_max: float = 10.0):
    """Descending steps and the band order (highest centroid first, ties by band index)."""
    deltas = np.asarray(deltas, dtype=float)
    centroids = np.asarray(centroids, dtype=float)
    if deltas.shape != centroids.shape:
        raise ParameterError("deltas and centroids must match")
    ordered, _ = enforce_order_t(Tensor(deltas), delta_min, delta_max)
    band_order = np.argsort(-centroids, kind="stable")
    return ordered.data, band_order


def assign_scales(fit: PiecewiseFit, w: float = DEFAULT_W, mode: str = "per-band",
                  delta_min: float | None = None, delta_max: float | None = None,
                  acquisition_step: float = 1.0) -> ScaleAssignment:
    """Full value-level mapping from a fit to a checked :class:`ScaleAssignment`."""
    dmin, dmax = default_delta_bounds(acquisition_step)
    delta_min = dmin if delta_min is None else delta_min
    delta_max = dmax if delta_max is None else delta_max
    if not 0 < delta_min < delta_max:
        raise ParameterError("need 0 < delta_min < delta_max")
    ordered, info = deltas_from_fit_t(Tensor(np.log(fit.knees)), Tensor(fit.betas), fit.f_min, fit.f_max,
                                      w, mode, delta_min, delta_max)
    centroids = info["centroids"].data
    sa = ScaleAssignment(ordered.data, centroids, fit.bands, np.argsort(-centroids, kind="stable"), mode, w,
                         delta_min, delta_max, acquisition_step)
    sa.check()
    return sa


def delta_anchor_loss(deltas, acquisition_step: float = 1.0, weight: float = 0.1) -> float:
    """``weight * mean_k log(delta_k / step)^2``."""
    d = np.asarray(deltas, dtype=float)
    if np.any(d <= 0) or acquisition_step <= 0:
        raise ParameterError("deltas and acquisition_step must be positive")
    return float(delta_anchor_loss_t(Tensor(d), acquisition_step, weight).data)


def effective_timescale(delta, A):
    """``delta / |A|`` for a stable (negative) decay rate."""
    A = np.asarray(A, dtype=float)
    if np.any(A >= 0):
        raise ParameterError("A must be negative (stable mode)")
    if np.any(np.asarray(delta) <= 0):
        raise ParameterError("delta must be positive")
    out = np.asarray(delta) / np.abs(A)
    return float(out) if np.ndim(out) == 0 else out

"""Piecewise power-law spectra: the fit container, the offline grid fit, and the fit/seam losses."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..engine import F, Tensor
from ..errors import ParameterError
from ..signalgen import BETA_BOUNDS
from .spectrum import Spectrum

RESOLUTIONS = (1, 2, 4)


@dataclass
class PiecewiseFit:
    """``log P(f) = log_amplitudes[k] - betas[k] * log f`` on segment ``k``.

    Segments are left-closed: segment ``k`` covers ``[knee_{k-1}, knee_k)``
    with ``f_min``/``f_max`` as outer edges. Amplitudes are natural-log.
    """

    knees: np.ndarray
    betas: np.ndarray
    log_amplitudes: np.ndarray
    f_min: float
    f_max: float
    residual: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.knees = np.atleast_1d(np.asarray(self.knees, dtype=float))
        self.betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        self.log_amplitudes = np.atleast_1d(np.asarray(self.log_amplitudes, dtype=float))
        if self.knees.size == 0:
            self.knees = np.zeros(0)
        if len(self.knees) != self.K - 1 or len(self.log_amplitudes) != self.K:
            raise ParameterError("need K-1 knees and K amplitudes for K betas")
        edges = self.edges
        if not np.all(np.diff(edges) > 0):
            raise ParameterError(f"knees must be strictly increasing inside ({self.f_min}, {self.f_max})")

    @property
    def K(self) -> int:
        return len(self.betas)

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[self.f_min], self.knees, [self.f_max]])

    @property
    def bands(self) -> list[tuple[float, float]]:
        e = self.edges
        return [(float(a), float(b)) for a, b in zip(e[:-1], e[1:])]

    def is_valid(self, seam_tol: float | None = None) -> bool:
        lo, hi = BETA_BOUNDS
        ok = bool(np.all(np.diff(self.edges) > 0) and np.all((self.betas >= lo) & (self.betas <= hi)))
        if seam_tol is not None:
            ok = ok and seam_loss(self) <= seam_tol
        return ok

    def projected(self) -> "PiecewiseFit":
        """Same knees/betas with amplitudes re-derived left to right for continuity."""
        logc = [self.log_amplitudes[0]]
        for k, knee in enumerate(self.knees):
            logc.append(logc[-1] + (self.betas[k + 1] - self.betas[k]) * np.log(knee))
        return PiecewiseFit(self.knees.copy(), self.betas.copy(), np.asarray(logc), self.f_min,
                            self.f_max, self.residual, dict(self.meta))

    def clamped(self) -> "PiecewiseFit":
        lo, hi = BETA_BOUNDS
        return PiecewiseFit(self.knees.copy(), np.clip(self.betas, lo, hi), self.log_amplitudes.copy(),
                            self.f_min, self.f_max, self.residual, dict(self.meta))

    def segment_index(self, f) -> np.ndarray:
        return np.searchsorted(self.knees, np.asarray(f, dtype=float), side="right")

    def log_model(self, f) -> np.ndarray:
        seg = self.segment_index(f)
        return self.log_amplitudes[seg] - self.betas[seg] * np.log(f)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "knees": self.knees.tolist(),
            "betas": self.betas.tolist(),
            "log_amplitudes": self.log_amplitudes.tolist(),
            "f_min": self.f_min,
            "f_max": self.f_max,
            "residual": None if not np.isfinite(self.residual) else self.residual,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseFit":
        res = d.get("residual")
        return cls(d["knees"], d["betas"], d["log_amplitudes"], d["f_min"], d["f_max"],
                   float("nan") if res is None else res)


def eval_piecewise(fit: PiecewiseFit, f, project: bool = True):
    """Model power at ``f`` (seam-projected by default so the model is continuous)."""
    f_arr = np.asarray(f, dtype=float)
    tol = 1e-12 * max(fit.f_max, 1.0)
    if np.any(f_arr < fit.f_min - tol) or np.any(f_arr > fit.f_max + tol):
        raise ParameterError(f"frequency outside [{fit.f_min}, {fit.f_max}]")
    model = fit.projected() if project else fit
    out = np.exp(model.log_model(f_arr))
    return float(out) if out.ndim == 0 else out


# -- offline grid fit ----------------------------------------------------------

class _SegmentStats:
    """Prefix sums that give per-segment OLS of y on u in O(1)."""

    def __init__(self, u: np.ndarray, y: np.ndarray):
        z = np.zeros(1)
        self.n = np.concatenate([z, np.cumsum(np.ones_like(u))])
        self.su = np.concatenate([z, np.cumsum(u)])
        self.sy = np.concatenate([z, np.cumsum(y)])
        self.suu = np.concatenate([z, np.cumsum(u * u)])
        self.suy = np.concatenate([z, np.cumsum(u * y)])
        self.syy = np.concatenate([z, np.cumsum(y * y)])

    def ols(self, i, j):
        """Slope, intercept and SSE of the segment ``[i, j)`` (arrays broadcast)."""
        n = self.n[j] - self.n[i]
        su = self.su[j] - self.su[i]
        sy = self.sy[j] - self.sy[i]
        sxx = (self.suu[j] - self.suu[i]) - su * su / n
        sxy = (self.suy[j] - self.suy[i]) - su * sy / n
        syy = (self.syy[j] - self.syy[i]) - sy * sy / n
        slope = np.divide(sxy, sxx, out=np.zeros_like(sxy), where=sxx > 0)
        sse = np.maximum(syy - slope * sxy, 0.0)
        intercept = (sy - slope * su) / n
        return slope, intercept, sse

    def total_sse(self, splits: np.ndarray, n_bins: int) -> np.ndarray:
        """Total SSE for rows of split indices ``(M, K-1)``."""
        m = splits.shape[0]
        bounds = np.concatenate([np.zeros((m, 1), int), splits, np.full((m, 1), n_bins)], axis=1)
        total = np.zeros(m)
        for k in range(bounds.shape[1] - 1):
            total += self.ols(bounds[:, k], bounds[:, k + 1])[2]
        return total


def knee_grid(spectrum: Spectrum, K: int, n_grid: int = 48, min_bins: int = 3) -> np.ndarray:
    """Candidate split indices from log-spaced frequencies; each split ``s`` puts bins ``< s`` left."""
    cand = np.geomspace(spectrum.freqs[0], spectrum.freqs[-1], n_grid + 2)[1:-1]
    splits = np.unique(np.searchsorted(spectrum.freqs, cand))
    return splits[(splits >= min_bins) & (splits <= len(spectrum) - min_bins)]


def _valid_combos(cands: np.ndarray, K: int, n_bins: int, min_bins: int) -> np.ndarray:
    if K == 1:
        return np.zeros((1, 0), dtype=int)
    combos = np.array(list(itertools.combinations(cands.tolist(), K - 1)), dtype=int)
    if combos.size == 0:
        return combos.reshape(0, K - 1)
    bounds = np.concatenate([np.zeros((len(combos), 1), int), combos,
                             np.full((len(combos), 1), n_bins)], axis=1)
    ok = np.all(np.diff(bounds, axis=1) >= min_bins, axis=1)
    return combos[ok]


def grid_residuals(spectrum: Spectrum, K: int, n_grid: int = 48, min_bins: int = 3):
    """All admissible grid split combinations and their total squared log residuals."""
    u, y = spectrum.log_freqs, spectrum.log_power()
    stats = _SegmentStats(u, y)
    combos = _valid_combos(knee_grid(spectrum, K, n_grid, min_bins), K, len(u), min_bins)
    return combos, stats.total_sse(combos, len(u)) if len(combos) else np.zeros(0)


def init_fit(spectrum: Spectrum, K: int = 3, n_grid: int = 48, min_bins: int = 3,
             refine: bool = True) -> PiecewiseFit:
    """Exhaustive log-spaced knee grid + per-segment OLS in log-log space.

    After the grid minimum is found, each split is refined at bin resolution
    within one grid cell on either side (jointly when affordable). Reported
    knees are where adjacent fitted lines intersect, when that point falls
    between the two bins flanking the split.
    """
    if K < 1:
        raise ParameterError("K must be >= 1")
    n = len(spectrum)
    if n < 4 * K or n < K * min_bins:
        raise ParameterError(f"need at least {max(4 * K, K * min_bins)} bins for K={K}, got {n}")
    u, y = spectrum.log_freqs, spectrum.log_power()
    stats = _SegmentStats(u, y)
    if K == 1:
        best = np.zeros(0, dtype=int)
    else:
        cands = knee_grid(spectrum, K, n_grid, min_bins)
        combos = _valid_combos(cands, K, n, min_bins)
        if len(combos) == 0:
            raise ParameterError("no admissible knee placement on the grid")
        sse = stats.total_sse(combos, n)
        best = combos[int(np.argmin(sse))]
        if refine:
            best = _refine(stats, best, cands, n, min_bins)
    bounds = np.concatenate([[0], best, [n]])
    slopes, intercepts, sses = stats.ols(bounds[:-1], bounds[1:])
    betas = -slopes
    knees = np.array([_knee_location(u, s, intercepts[k], slopes[k], intercepts[k + 1], slopes[k + 1])
                      for k, s in enumerate(best)])
    return PiecewiseFit(np.exp(knees), betas, intercepts, spectrum.f_min, spectrum.f_max,
                        float(np.sum(sses)), {"splits": best.tolist()})


def _knee_location(u, split, a_left, s_left, a_right, s_right) -> float:
    lo, hi = u[split - 1], u[split]
    if s_left != s_right:
        cross = (a_right - a_left) / (s_left - s_right)
        if lo <= cross <= hi:
            return cross
    return 0.5 * (lo + hi)


def _refine(stats: _SegmentStats, best: np.ndarray, cands: np.ndarray, n: int, min_bins: int,
            max_joint: int = 1_000_000) -> np.ndarray:
    windows = []
    for s in best:
        pos = int(np.searchsorted(cands, s))
        lo = cands[pos - 1] if pos > 0 else min_bins
        hi = cands[pos + 1] if pos + 1 < len(cands) else n - min_bins
        windows.append(np.arange(lo, hi + 1))
    if np.prod([len(w) for w in windows], dtype=float) <= max_joint:
        grids = np.meshgrid(*windows, indexing="ij")
        combos = np.stack([g.ravel() for g in grids], axis=1)
        bounds = np.concatenate([np.zeros((len(combos), 1), int), combos, np.full((len(combos), 1), n)], axis=1)
        combos = combos[np.all(np.diff(bounds, axis=1) >= min_bins, axis=1)]
        sse = stats.total_sse(combos, n)
        cand_best = combos[int(np.argmin(sse))]
        if stats.total_sse(cand_best[None], n)[0] <= stats.total_sse(best[None], n)[0]:
            return cand_best
        return best
    # coordinate descent fallback
    cur = best.copy()
    for _ in range(10):
        changed = False
        for k, w in enumerate(windows):
            trial = np.repeat(cur[None], len(w), axis=0)
            trial[:, k] = w
            bounds = np.concatenate([np.zeros((len(trial), 1), int), trial, np.full((len(trial), 1), n)], axis=1)
            trial = trial[np.all(np.diff(bounds, axis=1) >= min_bins, axis=1)]
            pick = trial[int(np.argmin(stats.total_sse(trial, n)))]
            if not np.array_equal(pick, cur):
                cur, changed = pick, True
        if not changed:
            break
    return cur


def consensus_fit(fits: list[PiecewiseFit]) -> PiecewiseFit:
    """Average per-channel fits in log-frequency space (knees) and exponent space."""
    if not fits:
        raise ParameterError("no fits to combine")
    knees = np.exp(np.mean([np.log(f.knees) for f in fits], axis=0)) if fits[0].K > 1 else np.zeros(0)
    betas = np.mean([f.betas for f in fits], axis=0)
    logc = np.mean([f.log_amplitudes for f in fits], axis=0)
    res = float(np.mean([f.residual for f in fits]))
    return PiecewiseFit(knees, betas, logc, fits[0].f_min, fits[0].f_max, res).projected()


# -- losses --------------------------------------------------------------------

def _coarsen_log(logp: Tensor, r: int) -> Tensor:
    """log of r-bin block means of exp(logp) along the last axis."""
    if r == 1:
        return logp
    n = logp.shape[-1] // r * r
    blocks = F.reshape(logp[..., :n], (*logp.shape[:-1], n // r, r))
    return F.logsumexp(blocks, axis=-1) - np.log(r)


def fit_loss_t(log_model: Tensor, log_power, resolutions=RESOLUTIONS) -> Tensor:
    """Multi-resolution MAE between log model and log data, averaged over resolutions and leading axes."""
    log_power = F.as_tensor(log_power)
    terms = []
    for r in resolutions:
        if log_model.shape[-1] // r < 1:
            continue
        diff = _coarsen_log(log_model, r) - _coarsen_log(log_power, r)
        terms.append(F.mean(F.abs_(diff)))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / float(len(terms))


def fit_loss(fit: PiecewiseFit, spectrum: Spectrum | list[Spectrum], resolutions=RESOLUTIONS) -> float:
    """Fit loss of one fit against one spectrum or the mean over several channels."""
    spectra = spectrum if isinstance(spectrum, (list, tuple)) else [spectrum]
    vals = []
    for s in spectra:
        model = F.Tensor(fit.log_model(s.freqs))
        vals.append(fit_loss_t(model, s.log_power(), resolutions).item())
    return float(np.mean(vals))


def seam_loss(fit: PiecewiseFit) -> float:
    """Sum over knees of squared left/right log-model gaps."""
    if fit.K == 1:
        return 0.0
    u = np.log(fit.knees)
    left = fit.log_amplitudes[:-1] - fit.betas[:-1] * u
    right = fit.log_amplitudes[1:] - fit.betas[1:] * u
    return float(np.sum((left - right) ** 2))

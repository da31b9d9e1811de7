"""Synthetic multiscale series and reference kernels with known ground truth.

Colored noise is built by exact FFT-bin magnitude shaping: every positive
frequency bin gets magnitude ``sqrt(P(f))`` and a uniform random phase, so the
periodogram of the (unstandardized) output equals ``P`` bin for bin.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParameterError

BETA_BOUNDS = (0.3, 5.0)


@dataclass(frozen=True)
class PiecewiseSpec:
    """Ground-truth continuous piecewise power law ``P(f) = c_k f^-beta_k``.

    ``amplitude`` is ``c_1``; later segment amplitudes follow from continuity
    at the knees. Outside ``[f_min, f_max]`` the end segments are extended.
    """

    knees: tuple[float, ...]
    exponents: tuple[float, ...]
    f_min: float = 1e-3
    f_max: float = 0.5
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "knees", tuple(float(k) for k in self.knees))
        object.__setattr__(self, "exponents", tuple(float(b) for b in self.exponents))
        self.validate()

    @property
    def K(self) -> int:
        return len(self.exponents)

    def validate(self) -> None:
        if len(self.knees) != self.K - 1:
            raise ParameterError(f"need {self.K - 1} knees for {self.K} exponents, got {len(self.knees)}")
        edges = (self.f_min, *self.knees, self.f_max)
        if not all(a < b for a, b in zip(edges[:-1], edges[1:])):
            raise ParameterError(f"knees must lie strictly inside ({self.f_min}, {self.f_max}) in increasing order")
        if self.f_min <= 0:
            raise ParameterError("f_min must be positive")
        lo, hi = BETA_BOUNDS
        if any(not lo <= b <= hi for b in self.exponents):
            raise ParameterError(f"exponents must lie in [{lo}, {hi}], got {self.exponents}")
        if not self.amplitude > 0:
            raise ParameterError("amplitude must be positive")

    def log_amplitudes(self) -> np.ndarray:
        """Natural-log segment intercepts ``log c_k`` implied by continuity."""
        logc = [np.log(self.amplitude)]
        for k, knee in enumerate(self.knees):
            # c_k f^-b_k == c_{k+1} f^-b_{k+1} at the knee
            logc.append(logc[-1] + (self.exponents[k + 1] - self.exponents[k]) * np.log(knee))
        return np.asarray(logc)

    def log_power(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        seg = np.searchsorted(np.asarray(self.knees), f, side="right")
        logc = self.log_amplitudes()
        betas = np.asarray(self.exponents)
        return logc[seg] - betas[seg] * np.log(f)

    def power(self, f) -> np.ndarray:
        return np.exp(self.log_power(f))


@dataclass
class LabeledSequenceSet:
    sequences: np.ndarray  # (N, T, d)
    labels: np.ndarray | None = None  # (N,) ints or (N, H, d) floats
    acquisition_step: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=float)
        if self.sequences.ndim != 3:
            raise ParameterError(f"sequences must be N x T x d, got shape {self.sequences.shape}")
        n, t, d = self.sequences.shape
        if n < 1 or t < 4 or d < 1:
            raise ParameterError(f"need N>=1, T>=4, d>=1, got {self.sequences.shape}")
        if not self.acquisition_step > 0:
            raise ParameterError("acquisition_step must be positive")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != n:
                raise ParameterError(f"{len(self.labels)} labels for {n} sequences")
            if self.labels.ndim == 1 and np.any(self.labels < 0):
                raise ParameterError("class labels must be nonnegative")

    @property
    def n(self) -> int:
        return self.sequences.shape[0]

    @property
    def T(self) -> int:
        return self.sequences.shape[1]

    @property
    def d(self) -> int:
        return self.sequences.shape[2]

    @property
    def is_classification(self) -> bool:
        return self.labels is not None and self.labels.ndim == 1

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.is_classification else 0

    def subset(self, idx) -> "LabeledSequenceSet":
        idx = np.asarray(idx)
        return LabeledSequenceSet(
            self.sequences[idx],
            None if self.labels is None else self.labels[idx],
            self.acquisition_step,
            dict(self.metadata),
        )

    def to_csv_dir(self, path) -> Path:
        """Write one CSV per sequence plus ``manifest.json``."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        header = ",".join(f"c{j}" for j in range(self.d))
        files = []
        for i, seq in enumerate(self.sequences):
            name = f"seq_{i:05d}.csv"
            np.savetxt(path / name, seq, delimiter=",", header=header, comments="", fmt="%.17g")
            files.append(name)
        manifest = {
            "files": files,
            "acquisition_step": self.acquisition_step,
            "labels": None if self.labels is None else self.labels.tolist(),
            "label_kind": None if self.labels is None else ("class" if self.is_classification else "forecast"),
            "generator": _jsonable(self.metadata),
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _standardize(x: np.ndarray, axis: int = -2) -> np.ndarray:
    mu = x.mean(axis=axis, keepdims=True)
    sd = x.std(axis=axis, keepdims=True)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def shaped_noise(power_fn, T: int, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Real series of length ``T`` (last axis) with bin magnitudes ``sqrt(power_fn(f))``."""
    freqs = np.fft.rfftfreq(T)
    mag = np.zeros_like(freqs)
    mag[1:] = np.sqrt(power_fn(freqs[1:]))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(*shape, len(freqs)))
    spec = mag * np.exp(1j * phase)
    if T % 2 == 0:
        # Nyquist bin of a real signal is real: keep its magnitude, random sign
        spec[..., -1] = mag[-1] * np.sign(np.cos(phase[..., -1]) + 1e-300)
    return np.fft.irfft(spec, n=T, axis=-1)


def gen_colored_noise(spec: PiecewiseSpec, T: int, d: int = 1, seed: int = 0, n: int = 1,
                      acquisition_step: float = 1.0) -> LabeledSequenceSet:
    """``n`` independent ``T x d`` series whose PSD follows ``spec``, standardized per channel."""
    if T < 4:
        raise ParameterError("T must be at least 4")
    if not isinstance(spec, PiecewiseSpec):
        raise ParameterError("spec must be a PiecewiseSpec")
    spec.validate()
    rng = np.random.default_rng(seed)
    x = shaped_noise(spec.power, T, (n, d), rng)  # (n, d, T)
    x = _standardize(np.swapaxes(x, 1, 2), axis=1)
    meta = {"generator": "colored_noise", "spec": asdict(spec), "T": T, "d": d, "seed": seed, "n": n}
    return LabeledSequenceSet(x, None, acquisition_step, meta)


DEFAULT_BACKGROUND = PiecewiseSpec(knees=(0.04, 0.2), exponents=(0.8, 1.6, 0.6), f_min=1e-3, f_max=0.5)


def gen_two_timescale_task(n_per_class: int, T: int, d: int, slow_band=(0.02, 0.06),
                           fast_band=(0.22, 0.32), seed: int = 0, amplitude: float = 1.0,
                           n_tones: int = 3, background: PiecewiseSpec = DEFAULT_BACKGROUND,
                           acquisition_step: float = 1.0) -> LabeledSequenceSet:
    """Binary task: class 0 carries tones in ``slow_band``, class 1 in ``fast_band``.

    Both classes share the same broadband background; tones get a random
    frequency and phase per sequence and channel, so only spectral content
    separates the classes.
    """
    for lo, hi in (slow_band, fast_band):
        if not 0 < lo < hi < 0.5:
            raise ParameterError(f"band ({lo}, {hi}) must be a sub-interval of (0, 0.5)")
    if not (slow_band[1] <= fast_band[0] or fast_band[1] <= slow_band[0]):
        raise ParameterError(f"bands overlap: {slow_band} vs {fast_band}")
    if n_per_class < 1:
        raise ParameterError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    labels = np.repeat([0, 1], n_per_class)
    rng.shuffle(labels)
    bg = np.swapaxes(shaped_noise(background.power, T, (n, d), rng), 1, 2)
    bg = _standardize(bg, axis=1)
    bands = np.asarray([slow_band, fast_band])[labels]  # (n, 2)
    freqs = rng.uniform(bands[:, None, None, 0], bands[:, None, None, 1], size=(n, n_tones, d))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, n_tones, d))
    t = np.arange(T)[None, :, None, None]
    tones = np.sin(2.0 * np.pi * freqs[:, None] * t + phases[:, None]).sum(axis=2)
    tones *= amplitude * np.sqrt(2.0 / n_tones)
    x = _standardize(bg + tones, axis=1)
    meta = {
        "generator": "two_timescale", "n_per_class": n_per_class, "T": T, "d": d,
        "slow_band": list(slow_band), "fast_band": list(fast_band), "seed": seed,
        "amplitude": amplitude, "n_tones": n_tones, "background": asdict(background),
    }
    return LabeledSequenceSet(x, labels, acquisition_step, meta)


def make_forecast_set(series: LabeledSequenceSet, window: int, horizon: int,
                      stride: int | None = None) -> LabeledSequenceSet:
    """Slice long series into (input window, horizon target) pairs."""
    x = series.sequences
    if window < 4 or horizon < 1 or window + horizon > x.shape[1]:
        raise ParameterError("window + horizon must fit in the series and window >= 4")
    stride = stride or window
    starts = range(0, x.shape[1] - window - horizon + 1, stride)
    inp = np.concatenate([x[:, s:s + window] for s in starts])
    tgt = np.concatenate([x[:, s + window:s + window + horizon] for s in starts])
    meta = dict(series.metadata, window=window, horizon=horizon, stride=stride)
    return LabeledSequenceSet(inp, tgt, series.acquisition_step, meta)


# -- kernel profiles ---------------------------------------------------------

@dataclass
class KernelProfile:
    """Temporal kernel sampled on the uniform lag grid ``l * dt``."""

    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("kernel values must be finite")

    @property
    def lags(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.dt

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)) * self.dt)

    def __len__(self) -> int:
        return len(self.values)


def powerlaw_kernel(alpha: float, L: int, dt: float = 1.0) -> KernelProfile:
    """``g(l) = (1 + l dt)^-alpha`` for ``l = 0..L-1``."""
    if not alpha > 1:
        raise ParameterError("alpha must exceed 1 for a finite L1 mass")
    if L < 1:
        raise ParameterError("L must be at least 1")
    lags = np.arange(L) * dt
    return KernelProfile((1.0 + lags) ** (-alpha), dt)


def exp_mixture_kernel(weights: Sequence[float], rates: Sequence[float], L: int,
                       dt: float = 1.0, atol: float = 1e-9) -> KernelProfile:
    """``sum_k a_k exp(-lambda_k l dt)`` with ``a`` on the probability simplex."""
    a = np.asarray(weights, dtype=float)
    lam = np.asarray(rates, dtype=float)
    if a.shape != lam.shape or a.ndim != 1 or len(a) == 0:
        raise ParameterError("weights and rates must be matching non-empty vectors")
    if np.any(a < 0) or abs(a.sum() - 1.0) > atol:
        raise ParameterError(f"weights must be nonnegative and sum to 1, got sum {a.sum()}")
    if np.any(lam <= 0):
        raise ParameterError("rates must be positive")
    lags = np.arange(L) * dt
    return KernelProfile(np.exp(-np.outer(lags, lam)) @ a, dt)


def powerlaw_horizon(alpha: float, tail_fraction: float = 0.01) -> float:
    """Lag beyond which ``(1+t)^-alpha`` holds less than ``tail_fraction`` of its L1 mass."""
    return tail_fraction ** (-1.0 / (alpha - 1.0)) - 1.0

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError


@dataclass
class Spectrum:
    """One channel's power on a positive, DC-free frequency grid (cycles/sample)."""

    freqs: np.ndarray
    power: np.ndarray
    f_min: float
    f_max: float

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        if self.freqs.shape != self.power.shape or self.freqs.ndim != 1:
            raise ParameterError("freqs and power must be 1-D arrays of equal length")
        if len(self.freqs) == 0:
            raise ParameterError("empty spectrum")
        if np.any(np.diff(self.freqs) <= 0) or self.freqs[0] <= 0 or self.freqs[-1] > 0.5:
            raise ParameterError("freqs must be strictly increasing within (0, 0.5]")
        if np.any(self.power < 0):
            raise ParameterError("power must be nonnegative")

    def __len__(self) -> int:
        return len(self.freqs)

    @property
    def log_freqs(self) -> np.ndarray:
        return np.log(self.freqs)

    def log_power(self, floor: float = 1e-300) -> np.ndarray:
        return np.log(np.maximum(self.power, floor))


def band_mask(freqs: np.ndarray, f_min: float, f_max: float) -> np.ndarray:
    # small slack so grid frequencies computed as k/T still count at the bounds
    tol = 1e-12
    return (freqs > 0) & (freqs >= f_min - tol) & (freqs <= f_max + tol)


def periodogram_array(x: np.ndarray, f_min: float | None = None, f_max: float = 0.5,
                      segments: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """|FFT|^2 along the last axis of ``x``, restricted to non-DC bins in the band.

    ``segments > 1`` averages periodograms of that many equal, non-overlapping
    chunks (Bartlett/Welch-style variance reduction without tapering).
    """
    x = np.asarray(x, dtype=float)
    T = x.shape[-1]
    if T < 4:
        raise ParameterError("periodogram needs at least 4 samples")
    if segments > 1:
        seg_len = T // segments
        if seg_len < 4:
            raise ParameterError("too many segments for this length")
        chunks = x[..., : seg_len * segments].reshape(*x.shape[:-1], segments, seg_len)
        freqs, power = periodogram_array(chunks, f_min, f_max)
        return freqs, power.mean(axis=-2)
    freqs = np.fft.rfftfreq(T)
    f_min = 1.0 / T if f_min is None else f_min
    mask = band_mask(freqs, f_min, f_max)
    if not mask.any():
        raise ParameterError(f"no frequency bins in [{f_min}, {f_max}] for T={T}")
    power = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    return freqs[mask], power[..., mask]


def periodogram(x, f_min: float | None = None, f_max: float = 0.5, segments: int = 1) -> Spectrum:
    """Single-channel periodogram of a length-T (or T x 1) series."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ParameterError(f"expected a single-channel series, got shape {x.shape}")
    freqs, power = periodogram_array(x, f_min, f_max, segments)
    f_min = freqs[0] if f_min is None else f_min
    return Spectrum(freqs, power, float(f_min), float(f_max))


def channel_spectra(seq: np.ndarray, f_min: float | None = None, f_max: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Periodograms of every channel of ``(..., T, d)`` sequences -> ``(..., d, n_bins)``."""
    seq = np.asarray(seq, dtype=float)
    return periodogram_array(np.swapaxes(seq, -1, -2), f_min, f_max)

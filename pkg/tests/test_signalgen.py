import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pimsm.errors import ParameterError
from pimsm.signalgen import (
    PiecewiseSpec,
    exp_mixture_kernel,
    gen_colored_noise,
    gen_two_timescale_task,
    make_forecast_set,
    powerlaw_horizon,
    powerlaw_kernel,
)
from pimsm.spectral import init_fit, periodogram, periodogram_array


def bandpower_features(x, band, n_keep=None):
    """Mean periodogram power inside ``band`` per sequence (summed over channels)."""
    if n_keep is not None:
        x = x[:, :n_keep]
    freqs = np.fft.rfftfreq(x.shape[1])
    power = np.abs(np.fft.rfft(x, axis=1)) ** 2
    sel = (freqs >= band[0]) & (freqs <= band[1])
    if not sel.any():
        # too short for an in-band bin: use the nearest one
        sel = np.abs(freqs - np.mean(band)) == np.min(np.abs(freqs - np.mean(band)))
    return np.log(power[:, sel].mean(axis=1).sum(axis=-1) + 1e-12)


def oracle_accuracy(train_x, train_y, test_x, test_y):
    """Threshold classifier on a single log-bandpower feature, fitted on train."""
    order = np.sort(train_x)
    cands = 0.5 * (order[1:] + order[:-1])
    best = max(cands, key=lambda c: max(np.mean((train_x > c) == train_y), np.mean((train_x <= c) == train_y)))
    sign = np.mean((train_x > best) == train_y) >= np.mean((train_x <= best) == train_y)
    pred = (test_x > best) if sign else (test_x <= best)
    return float(np.mean(pred == test_y))


class TestPiecewiseSpec:
    def test_rejects_unordered_knees(self):
        with pytest.raises(ParameterError):
            PiecewiseSpec(knees=(0.1, 0.05), exponents=(1, 1, 1)).validate()

    def test_rejects_exponent_outside_bounds(self):
        with pytest.raises(ParameterError):
            PiecewiseSpec(knees=(0.05,), exponents=(0.1, 1.0)).validate()

    def test_rejects_nonpositive_amplitude(self):
        with pytest.raises(ParameterError):
            PiecewiseSpec(knees=(0.05,), exponents=(1.0, 1.0), amplitude=0.0).validate()

    def test_power_is_continuous_at_knees(self):
        spec = PiecewiseSpec(knees=(0.01, 0.1), exponents=(0.5, 2.0, 1.0))
        for k in spec.knees:
            lo, hi = spec.power(k * (1 - 1e-12)), spec.power(k)
            assert lo == pytest.approx(hi, rel=1e-9)


class TestColoredNoise:
    spec = PiecewiseSpec(knees=(0.01, 0.08), exponents=(0.6, 2.2, 1.0))

    def test_determinism(self):
        a = gen_colored_noise(self.spec, 256, d=2, seed=3).sequences
        b = gen_colored_noise(self.spec, 256, d=2, seed=3).sequences
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = gen_colored_noise(self.spec, 256, seed=0).sequences
        b = gen_colored_noise(self.spec, 256, seed=1).sequences
        assert not np.allclose(a, b)

    def test_amplitude_invariance(self):
        loud = PiecewiseSpec(self.spec.knees, self.spec.exponents, amplitude=10.0)
        a = gen_colored_noise(self.spec, 512, d=3, seed=5).sequences
        b = gen_colored_noise(loud, 512, d=3, seed=5).sequences
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_standardized_per_channel(self):
        x = gen_colored_noise(self.spec, 300, d=4, seed=1, n=2).sequences
        np.testing.assert_allclose(x.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(x.std(axis=1), 1, atol=1e-12)

    def test_short_series_rejected(self):
        with pytest.raises(ParameterError):
            gen_colored_noise(self.spec, 3)

    def test_averaged_log_psd_matches_spec(self):
        T = 2 ** 14
        x = gen_colored_noise(self.spec, T, seed=11, n=32).sequences[..., 0]
        freqs, power = periodogram_array(x, self.spec.f_min, self.spec.f_max)
        avg = power.mean(axis=0)
        target = self.spec.power(freqs)
        # standardization fixes only the overall scale: match it in log space
        resid = np.log10(avg) - np.log10(target)
        resid -= np.median(resid)
        assert np.mean(np.abs(resid)) <= 0.15

    def test_single_effective_exponent_recovered(self):
        flat = PiecewiseSpec(knees=(0.01, 0.1), exponents=(1.0, 1.0, 1.0))
        x = gen_colored_noise(flat, 2 ** 16, seed=2).sequences[0, :, 0]
        fit = init_fit(periodogram(x, flat.f_min, flat.f_max), K=3)
        np.testing.assert_allclose(fit.betas, 1.0, atol=0.05)


class TestTwoTimescaleTask:
    def test_labels_balanced_and_binary(self):
        ds = gen_two_timescale_task(20, 64, 2, seed=0)
        assert ds.n == 40
        assert np.bincount(ds.labels).tolist() == [20, 20]

    def test_overlapping_bands_rejected(self):
        with pytest.raises(ParameterError):
            gen_two_timescale_task(4, 64, 1, slow_band=(0.05, 0.2), fast_band=(0.1, 0.3))

    def test_band_outside_nyquist_rejected(self):
        with pytest.raises(ParameterError):
            gen_two_timescale_task(4, 64, 1, fast_band=(0.3, 0.6))

    def test_deterministic(self):
        a = gen_two_timescale_task(5, 64, 2, seed=4)
        b = gen_two_timescale_task(5, 64, 2, seed=4)
        np.testing.assert_array_equal(a.sequences, b.sequences)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_zero_amplitude_is_chance(self):
        accs = []
        for seed in range(8):
            tr = gen_two_timescale_task(100, 128, 1, seed=seed, amplitude=0.0)
            te = gen_two_timescale_task(100, 128, 1, seed=100 + seed, amplitude=0.0)
            f = (0.02, 0.06)
            accs.append(oracle_accuracy(bandpower_features(tr.sequences, f), tr.labels,
                                        bandpower_features(te.sequences, f), te.labels))
        assert abs(np.mean(accs) - 0.5) < 0.05

    def test_bandpower_oracle_separates_classes(self):
        tr = gen_two_timescale_task(100, 128, 2, seed=0, amplitude=1.0)
        te = gen_two_timescale_task(100, 128, 2, seed=1, amplitude=1.0)
        f = (0.22, 0.32)
        acc = oracle_accuracy(bandpower_features(tr.sequences, f), tr.labels,
                              bandpower_features(te.sequences, f), te.labels)
        assert acc >= 0.95

    def test_truncation_hurts_slow_band_more(self):
        T = 128
        keep = T // 8
        tr = gen_two_timescale_task(200, T, 1, seed=0, amplitude=0.6)
        te = gen_two_timescale_task(200, T, 1, seed=1, amplitude=0.6)
        drops = {}
        for name, band in (("slow", (0.02, 0.06)), ("fast", (0.22, 0.32))):
            full = oracle_accuracy(bandpower_features(tr.sequences, band), tr.labels,
                                   bandpower_features(te.sequences, band), te.labels)
            short = oracle_accuracy(bandpower_features(tr.sequences, band, keep), tr.labels,
                                    bandpower_features(te.sequences, band, keep), te.labels)
            drops[name] = full - short
        assert drops["slow"] > drops["fast"]

    def test_csv_manifest(self, tmp_path):
        ds = gen_two_timescale_task(2, 16, 3, seed=0)
        out = ds.to_csv_dir(tmp_path / "set")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["acquisition_step"] == 1.0
        assert len(manifest["files"]) == 4
        header = (out / manifest["files"][0]).read_text().splitlines()[0]
        assert header == "c0,c1,c2"


def test_forecast_windows_align():
    base = gen_colored_noise(PiecewiseSpec((0.05,), (1.0, 2.0)), 100, d=2, seed=0, n=1)
    fs = make_forecast_set(base, window=20, horizon=5, stride=10)
    np.testing.assert_array_equal(fs.sequences[1], base.sequences[0, 10:30])
    np.testing.assert_array_equal(fs.labels[1], base.sequences[0, 30:35])


class TestKernels:
    def test_powerlaw_values(self):
        g = powerlaw_kernel(2.0, 5)
        assert g.values[0] == 1.0
        assert g.values[1] == 0.25

    def test_powerlaw_l1_mass(self):
        g = powerlaw_kernel(2.0, 10 ** 6, dt=0.01)
        trap = (g.values.sum() - 0.5 * (g.values[0] + g.values[-1])) * g.dt
        tail = 1.0 / (1.0 + (len(g) - 1) * g.dt)
        # trapezoid bias is dt^2 |g'(0)| / 12 ~ 1.7e-5
        assert trap + tail == pytest.approx(1.0, abs=1e-4)

    def test_powerlaw_alpha_one_rejected(self):
        with pytest.raises(ParameterError):
            powerlaw_kernel(1.0, 10)

    def test_single_exponential(self):
        assert exp_mixture_kernel([1.0], [1.0], 3).values[0] == 1.0

    def test_degenerate_mixture(self):
        a = exp_mixture_kernel([0.5, 0.5], [0.7, 0.7], 50, dt=0.1).values
        b = exp_mixture_kernel([1.0], [0.7], 50, dt=0.1).values
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_exponential_mass(self):
        g = exp_mixture_kernel([1.0], [2.0], 200_000, dt=1e-4)
        trap = (g.values.sum() - 0.5 * (g.values[0] + g.values[-1])) * g.dt
        assert trap == pytest.approx(0.5, rel=1e-6)

    def test_simplex_violation(self):
        with pytest.raises(ParameterError):
            exp_mixture_kernel([0.5, 0.6], [1.0, 2.0], 10)
        with pytest.raises(ParameterError):
            exp_mixture_kernel([1.5, -0.5], [1.0, 2.0], 10)

    def test_horizon_tail_fraction(self):
        t = powerlaw_horizon(2.0, 0.01)
        assert 1.0 / (1.0 + t) == pytest.approx(0.01)

    @settings(max_examples=50, deadline=None)
    @given(alpha=st.floats(1.05, 6.0), dt=st.floats(0.01, 2.0))
    def test_powerlaw_nonincreasing(self, alpha, dt):
        v = powerlaw_kernel(alpha, 64, dt).values
        assert np.all(v >= 0) and np.all(np.diff(v) <= 0)

    @settings(max_examples=50, deadline=None)
    @given(rate=st.floats(0.01, 20.0))
    def test_exponential_nonincreasing(self, rate):
        v = exp_mixture_kernel([1.0], [rate], 64, 0.1).values
        assert np.all(v >= 0) and np.all(np.diff(v) <= 0)

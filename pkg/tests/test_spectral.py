import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from pimsm.engine import F, Parameter, Tensor, grad
from pimsm.errors import ParameterError
from pimsm.signalgen import BETA_BOUNDS, PiecewiseSpec, gen_colored_noise
from pimsm.spectral import (
    HyperNetParams,
    PiecewiseFit,
    Spectrum,
    consensus_fit,
    energy_centroid,
    eval_piecewise,
    fit_loss,
    grid_residuals,
    hypernet_forward,
    hypernet_raw,
    init_fit,
    log_binned_features,
    periodogram,
    periodogram_array,
    seam_loss,
    soft_segment_model,
)
from pimsm.spectral.hypernet import train_hypernet


def exact_spectrum(spec: PiecewiseSpec, T: int = 2 ** 14) -> Spectrum:
    freqs = np.fft.rfftfreq(T)
    freqs = freqs[(freqs >= spec.f_min) & (freqs <= spec.f_max)]
    return Spectrum(freqs, spec.power(freqs), spec.f_min, spec.f_max)


def quad_centroid(a, b, beta):
    num = quad(lambda f: f ** (1.0 - beta), a, b, epsabs=0, epsrel=1e-13, limit=200)[0]
    den = quad(lambda f: f ** (-beta), a, b, epsabs=0, epsrel=1e-13, limit=200)[0]
    return num / den


class TestPeriodogram:
    def test_sinusoid_concentrates(self):
        T = 256
        x = np.sin(2 * np.pi * 20 / T * np.arange(T))
        s = periodogram(x)
        k = np.argmax(s.power)
        assert s.freqs[k] == pytest.approx(20 / T)
        assert s.power[k] / s.power.sum() >= 0.99

    def test_constant_has_no_in_band_power(self):
        s = periodogram(np.full(64, 3.7))
        assert np.all(s.power < 1e-20)

    def test_dc_excluded(self):
        s = periodogram(np.random.default_rng(0).normal(size=32))
        assert s.freqs[0] > 0

    def test_empty_band_raises(self):
        with pytest.raises(ParameterError):
            periodogram(np.ones(16), f_min=0.01, f_max=0.05)

    def test_too_short_raises(self):
        with pytest.raises(ParameterError):
            periodogram(np.ones(3))

    def test_band_restriction(self):
        s = periodogram(np.random.default_rng(1).normal(size=200), f_min=0.1, f_max=0.3)
        assert s.freqs.min() >= 0.1 and s.freqs.max() <= 0.3

    def test_white_noise_is_flat(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 4096))
        freqs, power = periodogram_array(x)
        fit = init_fit(Spectrum(freqs, power.mean(axis=0), freqs[0], 0.5), K=1)
        assert abs(fit.betas[0]) < 0.15

    def test_segment_averaging_keeps_shape(self):
        x = np.random.default_rng(2).normal(size=(3, 1024))
        freqs, power = periodogram_array(x, segments=4)
        assert power.shape == (3, len(freqs))
        assert freqs[0] == pytest.approx(1 / 256)


class TestCentroid:
    def test_flat_midpoint(self):
        assert energy_centroid(0.1, 0.3, 0.0) == pytest.approx(0.2, rel=1e-14)

    def test_beta_one(self):
        assert energy_centroid(0.01, 0.1, 1.0) == pytest.approx(0.09 / np.log(10), rel=1e-12)

    def test_beta_two(self):
        assert energy_centroid(0.01, 0.1, 2.0) == pytest.approx(np.log(10) / 90, rel=1e-12)

    @pytest.mark.parametrize("beta", [0.3, 0.9, 1 - 1e-7, 1.0, 1 + 1e-7, 1.5, 2 - 1e-7, 2.0, 2 + 1e-7, 3.0, 5.0])
    def test_matches_quadrature(self, beta):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = 10 ** rng.uniform(-3, -1)
            b = a * 10 ** rng.uniform(0.05, 2)
            b = min(b, 0.5)
            assert energy_centroid(a, b, beta) == pytest.approx(quad_centroid(a, b, beta), rel=1e-8)

    @pytest.mark.parametrize("center", [1.0, 2.0])
    def test_branch_continuity(self, center):
        vals = [energy_centroid(0.002, 0.3, center + d) for d in (-2e-6, -1e-6, -1e-7, 0.0, 1e-7, 1e-6, 2e-6)]
        assert np.ptp(vals) / vals[3] < 1e-5
        assert abs(vals[2] - vals[4]) / vals[3] < 1e-6

    def test_rejects_bad_band(self):
        with pytest.raises(ParameterError):
            energy_centroid(0.2, 0.1, 1.0)
        with pytest.raises(ParameterError):
            energy_centroid(0.0, 0.1, 1.0)
        with pytest.raises(ParameterError):
            energy_centroid(0.1, 0.2, np.nan)

    @settings(max_examples=200, deadline=None)
    @given(a=st.floats(1e-4, 0.2), ratio=st.floats(1.01, 400.0), beta=st.floats(0.0, 6.0))
    def test_inside_band(self, a, ratio, beta):
        b = a * ratio
        c = energy_centroid(a, b, beta)
        assert a < c < b

    def test_monotone_decreasing_in_beta(self):
        betas = np.linspace(0.3, 5.0, 400)
        c = energy_centroid(0.005, 0.4, betas)
        assert np.all(np.diff(c) < 0)

    def test_gradient_matches_finite_difference(self):
        from pimsm.spectral import energy_centroid_t

        for beta0 in (0.7, 1.0, 2.0, 3.3):
            b = Parameter(np.array([beta0]))
            (g,) = grad(F.sum_(energy_centroid_t(0.01, 0.2, b)), [b])
            h = 1e-6
            fd = (energy_centroid(0.01, 0.2, beta0 + h) - energy_centroid(0.01, 0.2, beta0 - h)) / (2 * h)
            assert g[0] == pytest.approx(fd, rel=1e-5)


class TestInitFit:
    def test_exact_recovery(self):
        spec = PiecewiseSpec(knees=(0.01, 0.08), exponents=(0.5, 2.0, 1.0))
        fit = init_fit(exact_spectrum(spec), K=3)
        np.testing.assert_allclose(fit.betas, spec.exponents, atol=1e-6)
        cell = np.log(0.5 / 1e-3) / 49  # one log-grid cell
        assert np.all(np.abs(np.log(fit.knees) - np.log(spec.knees)) <= cell)

    def test_single_exponent(self):
        spec = PiecewiseSpec(knees=(0.02, 0.1), exponents=(1.7, 1.7, 1.7))
        s = exact_spectrum(spec)
        fit = init_fit(s, K=3)
        assert np.ptp(fit.betas) < 0.05
        _, sse = grid_residuals(s, 3)
        assert np.max(sse) - np.min(sse) < 1e-3

    def test_k1_is_regression(self):
        rng = np.random.default_rng(0)
        f = np.linspace(0.01, 0.5, 40)
        p = np.exp(rng.normal(size=40)) * f ** -1.3
        fit = init_fit(Spectrum(f, p, 0.01, 0.5), K=1)
        slope, icpt = np.polyfit(np.log(f), np.log(p), 1)
        assert fit.knees.size == 0
        assert fit.betas[0] == pytest.approx(-slope, rel=1e-10)
        assert fit.log_amplitudes[0] == pytest.approx(icpt, rel=1e-10)

    def test_too_few_bins(self):
        f = np.linspace(0.1, 0.5, 10)
        with pytest.raises(ParameterError):
            init_fit(Spectrum(f, np.ones(10), 0.1, 0.5), K=3)

    def test_grid_minimum_without_refinement(self):
        x = gen_colored_noise(PiecewiseSpec((0.02, 0.1), (0.6, 2.5, 1.2)), 2048, seed=4).sequences[0, :, 0]
        s = periodogram(x, 1e-3, 0.5)
        fit = init_fit(s, K=3, refine=False)
        _, sse = grid_residuals(s, 3)
        assert fit.residual == pytest.approx(sse.min(), rel=1e-12)

    def test_refinement_never_worse(self):
        x = gen_colored_noise(PiecewiseSpec((0.02, 0.1), (0.6, 2.5, 1.2)), 2048, seed=5).sequences[0, :, 0]
        s = periodogram(x, 1e-3, 0.5)
        assert init_fit(s, refine=True).residual <= init_fit(s, refine=False).residual + 1e-12

    def test_recovery_from_seed_average(self):
        spec = PiecewiseSpec(knees=(0.01, 0.08), exponents=(0.8, 2.4, 1.2))
        x = gen_colored_noise(spec, 2 ** 14, seed=0, n=32).sequences[..., 0]
        freqs, power = periodogram_array(x, spec.f_min, spec.f_max)
        fit = init_fit(Spectrum(freqs, power.mean(axis=0), spec.f_min, spec.f_max))
        rel = np.abs(np.log(fit.knees) - np.log(spec.knees)) / np.abs(np.log(spec.knees))
        assert np.all(rel <= 0.25)
        np.testing.assert_allclose(fit.betas, spec.exponents, atol=0.3)

    @pytest.mark.parametrize("spec", [PiecewiseSpec(knees=(0.01, 0.08), exponents=(0.8, 2.4, 1.2)),
                                      PiecewiseSpec(knees=(0.005, 0.05), exponents=(0.4, 1.8, 0.9))])
    def test_recovery_under_periodogram_noise(self, spec):
        # Gaussian Fourier coefficients give chi-square periodogram scatter, unlike exact-magnitude shaping
        T = 2 ** 14
        rng = np.random.default_rng(0)
        mag = np.zeros(T // 2 + 1)
        mag[1:] = np.sqrt(spec.power(np.fft.rfftfreq(T)[1:]))
        coef = (rng.normal(size=(32, len(mag))) + 1j * rng.normal(size=(32, len(mag)))) * mag / np.sqrt(2)
        x = np.fft.irfft(coef, n=T, axis=-1)
        freqs, power = periodogram_array(x, spec.f_min, spec.f_max)
        fit = init_fit(Spectrum(freqs, power.mean(axis=0), spec.f_min, spec.f_max))
        rel = np.abs(np.log(fit.knees) - np.log(spec.knees)) / np.abs(np.log(spec.knees))
        assert np.all(rel <= 0.25)
        np.testing.assert_allclose(fit.betas, spec.exponents, atol=0.3)

    def test_json_round_trip(self):
        fit = init_fit(exact_spectrum(PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0))))
        d = json.loads(fit.to_json())
        assert set(d) == {"K", "knees", "betas", "log_amplitudes", "f_min", "f_max", "residual"}
        back = PiecewiseFit.from_dict(d)
        np.testing.assert_array_equal(back.knees, fit.knees)
        np.testing.assert_array_equal(back.betas, fit.betas)

    def test_consensus_of_identical_fits(self):
        fit = init_fit(exact_spectrum(PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0))))
        c = consensus_fit([fit, fit])
        np.testing.assert_allclose(c.knees, fit.knees, rtol=1e-12)
        np.testing.assert_allclose(c.betas, fit.betas, rtol=1e-12)


class TestEvalPiecewise:
    fit = PiecewiseFit([0.05, 0.2], [0.0, 2.0, 1.0], [np.log(3.0), 0.0, 0.0], 0.01, 0.5)

    def test_flat_segment(self):
        assert eval_piecewise(self.fit, 0.02, project=False) == pytest.approx(3.0)

    def test_beta_two(self):
        fit = PiecewiseFit([], [2.0], [0.0], 0.01, 0.5)
        assert eval_piecewise(fit, 0.1) == pytest.approx(100.0)

    def test_continuous_at_knees_after_projection(self):
        proj = self.fit.projected()
        for k, knee in enumerate(proj.knees):
            left = proj.log_amplitudes[k] - proj.betas[k] * np.log(knee)
            right = proj.log_amplitudes[k + 1] - proj.betas[k + 1] * np.log(knee)
            assert np.exp(left) == pytest.approx(np.exp(right), rel=1e-9)
        assert seam_loss(proj) == pytest.approx(0.0, abs=1e-20)

    def test_left_closed(self):
        proj = self.fit.projected()
        at = eval_piecewise(self.fit, 0.05)
        assert at == pytest.approx(np.exp(proj.log_amplitudes[1] - 2.0 * np.log(0.05)))

    def test_out_of_bounds(self):
        with pytest.raises(ParameterError):
            eval_piecewise(self.fit, 0.6)
        with pytest.raises(ParameterError):
            eval_piecewise(self.fit, 0.001)


class TestLosses:
    spec = PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0))

    def test_fit_loss_zero_on_exact(self):
        s = exact_spectrum(self.spec)
        fit = init_fit(s)
        assert fit_loss(fit, s) < 1e-9

    def test_fit_loss_constant_offset(self):
        s = exact_spectrum(self.spec)
        fit = init_fit(s)
        shifted = Spectrum(s.freqs, s.power * np.e, s.f_min, s.f_max)
        assert fit_loss(fit, shifted) == pytest.approx(1.0, abs=1e-9)

    def test_fit_loss_joint_rescaling(self):
        rng = np.random.default_rng(0)
        s = exact_spectrum(self.spec, 2048)
        noisy = Spectrum(s.freqs, s.power * np.exp(rng.normal(size=len(s))), s.f_min, s.f_max)
        fit = init_fit(noisy)
        scaled_fit = PiecewiseFit(fit.knees, fit.betas, fit.log_amplitudes + np.log(7.0), fit.f_min, fit.f_max)
        scaled = Spectrum(s.freqs, noisy.power * 7.0, s.f_min, s.f_max)
        assert fit_loss(scaled_fit, scaled) == pytest.approx(fit_loss(fit, noisy), rel=1e-12)

    def test_fit_loss_averages_channels(self):
        s = exact_spectrum(self.spec)
        fit = init_fit(s)
        off = Spectrum(s.freqs, s.power * np.e, s.f_min, s.f_max)
        assert fit_loss(fit, [s, off]) == pytest.approx(0.5, abs=1e-9)

    def test_seam_examples(self):
        cont = PiecewiseFit([0.1], [1.0, 2.0], [0.0, 0.0], 0.01, 0.5).projected()
        assert seam_loss(cont) == pytest.approx(0.0, abs=1e-24)
        bump = PiecewiseFit(cont.knees, cont.betas, cont.log_amplitudes + [0.0, 1.0], 0.01, 0.5)
        assert seam_loss(bump) == pytest.approx(1.0)
        bump2 = PiecewiseFit(cont.knees, cont.betas, cont.log_amplitudes + [0.0, 2.0], 0.01, 0.5)
        assert seam_loss(bump2) == pytest.approx(4.0 * seam_loss(bump))

    def test_seam_k1(self):
        assert seam_loss(PiecewiseFit([], [1.0], [0.0], 0.01, 0.5)) == 0.0


class TestHypernet:
    def test_zero_weights_give_bias_output(self):
        hp = HyperNetParams.init(3, 1e-3, 0.5, seed=0)
        for p in (hp.W1, hp.W2, hp.W3):
            p.data[:] = 0.0
        hp.b3.data[:] = [0.3, -0.2, 1.0, 0.0, -1.0]
        rng = np.random.default_rng(0)
        outs = [hypernet_raw(hp, rng.normal(size=32)) for _ in range(5)]
        for lk, b in outs[1:]:
            np.testing.assert_array_equal(lk.data, outs[0][0].data)
            np.testing.assert_array_equal(b.data, outs[0][1].data)

    def test_validity_randomized(self):
        rng = np.random.default_rng(0)
        lo, hi = BETA_BOUNDS
        n_draws = 10_000
        batch = 500
        for i in range(n_draws // batch):
            hp = HyperNetParams.init(3, 1e-3, 0.5, seed=i, out_scale=float(10 ** rng.uniform(-2, 2)))
            hp.b3.data[:] = rng.normal(scale=5.0, size=5)
            feats = rng.normal(scale=3.0, size=(batch, 32))
            lk, b = hypernet_raw(hp, feats)
            knees = np.exp(lk.data)
            assert np.all(np.diff(knees, axis=-1) > 0)
            assert np.all(knees > 1e-3) and np.all(knees < 0.5)
            assert np.all((b.data >= lo) & (b.data <= hi))

    def test_bias_from_fit_reproduces_fit(self):
        fit = init_fit(exact_spectrum(PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0))))
        hp = HyperNetParams.init(3, fit.f_min, fit.f_max, seed=0)
        for p in (hp.W1, hp.W2, hp.W3):
            p.data[:] = 0.0
        hp.set_bias_from_fit(fit)
        lk, b = hypernet_raw(hp, np.zeros(32))
        np.testing.assert_allclose(np.exp(lk.data), fit.knees, rtol=1e-9)
        np.testing.assert_allclose(b.data, fit.betas, rtol=1e-9)

    def test_forward_returns_valid_fit(self):
        s = exact_spectrum(PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0)), 1024)
        fit = hypernet_forward(HyperNetParams.init(3, s.f_min, s.f_max, seed=1), s)
        assert fit.is_valid()
        assert fit.K == 3

    def test_features_standardized(self):
        s = exact_spectrum(PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0)), 512)
        feats = log_binned_features(s.freqs, s.power, s.f_min, s.f_max)
        assert feats.shape == (32,)
        assert feats.mean() == pytest.approx(0.0, abs=1e-12)
        assert feats.std() == pytest.approx(1.0, rel=1e-12)

    def test_soft_model_gives_knee_gradient(self):
        s = exact_spectrum(PiecewiseSpec((0.01, 0.08), (0.5, 2.0, 1.0)), 1024)
        lk = Parameter(np.log([[0.02, 0.05]]))
        b = Tensor(np.array([[0.5, 2.0, 1.0]]))
        model, _ = soft_segment_model(lk, b, s.log_freqs, s.log_power()[None])
        (g,) = grad(F.mean(F.abs_(model - s.log_power()[None])), [lk])
        assert np.all(np.abs(g) > 0)

    def test_training_recovers_knees(self):
        T, f_min, f_max = 2 ** 10, 1e-3, 0.5

        def bank(n, seed):
            rng = np.random.default_rng(seed)
            spectra, knees, betas = [], [], []
            while len(spectra) < n:
                lk = np.sort(rng.uniform(np.log(4e-3), np.log(0.15), 2))
                b = rng.uniform(0.5, 3.0, 3)
                if lk[1] - lk[0] < 0.8 or np.min(np.abs(np.diff(b))) < 0.6:
                    continue
                spec = PiecewiseSpec(tuple(np.exp(lk)), tuple(b), f_min, f_max)
                x = gen_colored_noise(spec, T, seed=seed * 10_000 + len(spectra)).sequences[0, :, 0]
                freqs, p = periodogram_array(x, f_min, f_max)
                spectra.append(np.log(p))
                knees.append(lk)
                betas.append(b)
            return freqs, np.array(spectra), np.array(knees), np.array(betas)

        freqs, logp, lk, betas = bank(200, 1)
        _, logp_test, lk_test, _ = bank(50, 2)
        hp = HyperNetParams.init(3, f_min, f_max, seed=0)
        trace = train_hypernet(hp, freqs, logp, steps=800, lr=1e-2, targets=(lk, betas))
        assert trace[-1] < trace[0]
        pred, _ = hypernet_raw(hp, log_binned_features(freqs, np.exp(logp_test), f_min, f_max))
        rel = np.abs(pred.data - lk_test) / np.abs(lk_test)
        assert np.mean(rel) <= 0.15
        assert np.mean(rel <= 0.25) >= 0.95

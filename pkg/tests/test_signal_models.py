import numpy as np
import pytest
from numpy.testing import assert_allclose

from lib.errors import ShapeError, UnsupportedOperationError
from lib.signal_models import (
    CHUNK,
    DataModelSpec,
    LabeledBatch,
    biexp_signal,
    deer_kernel_dt,
    deer_operator,
    deer_operator_from_spec,
    deer_sigma_for_snr,
    fresnel_c,
    fresnel_s,
    ilr_concat,
    nlls_tikhonov,
    oscillatory_sample,
    oscillatory_signal,
    r2_score,
    sample_biexp,
    sample_deer,
    sample_noise,
    signal_autocorr,
)


class TestNoise:
    def test_independent_of_worker_count(self):
        n = 2 * CHUNK + 17
        assert_allclose(sample_noise(3, n, 7, workers=1), sample_noise(3, n, 7, workers=3), rtol=0, atol=0)

    def test_shape_and_moments(self):
        X = sample_noise(4, 50_000, 1)
        assert X.shape == (4, 50_000)
        assert_allclose(X @ X.T / X.shape[1], np.eye(4), atol=0.03)

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            sample_noise(0, 10, 1)


class TestOscillatory:
    def test_signal_at_zero_phase(self):
        assert_allclose(oscillatory_signal(0.0, 5), np.ones((5, 1)))

    def test_forced_phase_is_noise_free_at_sigma_zero(self):
        spec = DataModelSpec(kind="oscillatory", dim=4, sigma=0.0)
        X = oscillatory_sample(spec, 3, seed=2, alpha=[0.5, 1.0, -2.0])
        S = oscillatory_signal([0.5, 1.0, -2.0], 4)
        assert_allclose(X, np.vstack([S.real, S.imag]), atol=1e-14)

    def test_analytic_autocorrelation(self):
        spec = DataModelSpec(kind="oscillatory", dim=3)
        E = signal_autocorr(spec, mode="analytic", encoding="real")
        assert_allclose(np.diag(E), [1.0, 0.5, 0.5, 0.0, 0.5, 0.5])
        assert_allclose(signal_autocorr(spec, mode="analytic", encoding="complex"), np.eye(3))

    def test_monte_carlo_matches_analytic(self):
        spec = DataModelSpec(kind="oscillatory", dim=3, sigma=0.5)
        E_mc = signal_autocorr(spec, mode="monte_carlo", m=100_000, seed=4)
        assert_allclose(E_mc, signal_autocorr(spec), atol=0.02)

    def test_wrong_kind(self):
        with pytest.raises(UnsupportedOperationError):
            oscillatory_sample(DataModelSpec(kind="noise", dim=3), 10)


class TestDeer:
    def test_fresnel_values(self):
        assert fresnel_c(1.0) == pytest.approx(0.904524237900272, abs=1e-12)
        assert fresnel_s(1.0) == pytest.approx(0.310268301723381, abs=1e-12)

    def test_kernel_limit_at_zero(self):
        assert_allclose(deer_kernel_dt([0.0, 1e-8]), [1.0, 1.0], atol=1e-6)

    def test_kernel_decays(self):
        assert abs(float(deer_kernel_dt(200.0))) < 0.1

    def test_first_row_integrates_the_grid(self):
        spec = DataModelSpec(kind="deer", dim=32, n_r=40)
        K = deer_operator_from_spec(spec)
        assert K.shape == (32, 40)
        assert K[0].sum() == pytest.approx(spec.r_max - spec.r_min, rel=1e-12)

    def test_operator_rejects_decreasing_times(self):
        with pytest.raises(ValueError):
            deer_operator(np.linspace(2, 5, 5), [0.0, 1.0, 0.5])

    def test_samples_are_distributions(self):
        spec = DataModelSpec(kind="deer", dim=16, n_r=20)
        batch = sample_deer(deer_operator_from_spec(spec), 50, 0.0, seed=3, spec=spec)
        assert batch.inputs.shape == (16, 50)
        assert np.all(batch.targets >= 0)
        assert_allclose(batch.targets.sum(axis=0), 1.0, rtol=1e-12)

    def test_sigma_for_snr(self):
        spec = DataModelSpec(kind="deer", dim=16, n_r=20)
        K = deer_operator_from_spec(spec)
        sigma = deer_sigma_for_snr(K, 10.0, seed=1, r_grid=spec.r_grid())
        clean = sample_deer(K, 1000, 0.0, 1, spec.r_grid()).inputs
        rms = np.sqrt(np.mean(np.sum(clean ** 2, axis=0)))
        assert sigma == pytest.approx(rms / (10.0 * np.sqrt(16)), rel=1e-12)


class TestBiexp:
    spec = DataModelSpec(kind="biexp", dim=64, sigma=0.0)

    def test_nlls_recovers_clean_decay(self):
        t = self.spec.times()
        y = 0.6 * np.exp(-t / 120.0) + 0.4 * np.exp(-t / 380.0)
        fit = nlls_tikhonov(y, t, lam=0.0, seed=0)
        assert (fit.T21, fit.T22) == pytest.approx((120.0, 380.0), rel=1e-4)
        assert r2_score(y, fit.curve(t)) > 0.999999

    def test_free_amplitudes_fit_signed_curves(self):
        t = self.spec.times()
        y = -0.8 * np.exp(-t / 60.0) + 0.5 * np.exp(-t / 600.0)
        fit = nlls_tikhonov(y, t, lam=0.0, seed=1, free_amplitudes=True, bounds=(5.0, 5000.0))
        assert r2_score(y, fit.curve(t)) > 0.9999

    def test_signal_hand_values(self):
        y = biexp_signal(0.6, 0.4, 100.0, 200.0, [0.0, 100.0, 200.0])
        assert_allclose(y, [1.0, 0.46333993, 0.22835295], rtol=1e-7)
        with pytest.raises(ValueError):
            biexp_signal(0.6, 0.4, 0.0, 200.0, [0.0])

    def test_nlls_objective_never_increases(self):
        t = self.spec.times()
        noise = np.random.default_rng(3).standard_normal(t.size)
        y = biexp_signal(0.6, 0.4, 90.0, 310.0, t) + 0.02 * noise
        fit = nlls_tikhonov(y, t, seed=2)
        assert len(fit.trace) >= 2
        assert np.all(np.diff(fit.trace) <= 0.0)
        assert fit.objective == fit.trace[-1]

    def test_nlls_penalty_scale(self):
        t = self.spec.times()
        y = biexp_signal(0.6, 0.4, 150.0, 420.0, t)
        lam = 1.6e-4
        for scale in (500.0, 1.0):
            fit = nlls_tikhonov(y, t, lam=lam, seed=4, theta_scale=scale)
            penalty = lam * (fit.T21 ** 2 + fit.T22 ** 2) / scale ** 2
            assert fit.objective == pytest.approx(fit.residual + penalty, rel=1e-9)
        scaled = nlls_tikhonov(y, t, lam=lam, seed=4)
        unscaled = nlls_tikhonov(y, t, lam=lam, seed=4, theta_scale=1.0)
        assert unscaled.T21 + unscaled.T22 < scaled.T21 + scaled.T22

    def test_exchangeable_terms_come_out_ordered(self):
        t = self.spec.times()
        y = biexp_signal(0.5, 0.5, 400.0, 70.0, t)
        fit = nlls_tikhonov(y, t, lam=0.0, seed=6, c1=0.5, c2=0.5)
        assert fit.T21 <= fit.T22
        assert (fit.T21, fit.T22) == pytest.approx((70.0, 400.0), rel=1e-4)
        free = nlls_tikhonov(y, t, lam=0.0, seed=6, free_amplitudes=True, bounds=(5.0, 5000.0))
        assert free.T21 <= free.T22

    def test_nlls_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nlls_tikhonov(np.ones(5), np.arange(4.0))

    def test_targets_within_prior(self):
        batch = sample_biexp(self.spec, 200, seed=5)
        assert batch.inputs.shape == (64, 200)
        assert np.all((batch.targets >= self.spec.T_min) & (batch.targets <= self.spec.T_max))

    def test_self_concatenation(self):
        batch = sample_biexp(self.spec, 20, seed=5)
        both = ilr_concat(batch, "nd_nd")
        assert_allclose(both.inputs, np.vstack([batch.inputs, batch.inputs]))
        assert both.spec.ilr_mode == "nd_nd"

    def test_regularized_concatenation_is_smooth(self):
        noisy = sample_biexp(DataModelSpec(kind="biexp", dim=64, sigma=0.05), 5, seed=8)
        both = ilr_concat(noisy, "nd_reg", seed=1)
        reg = both.inputs[64:]
        rough = np.abs(np.diff(noisy.inputs, axis=0)).mean()
        assert np.abs(np.diff(reg, axis=0)).mean() < rough

    def test_unknown_mode(self):
        with pytest.raises(UnsupportedOperationError):
            ilr_concat(sample_biexp(self.spec, 2, seed=0), "reg_reg")


class TestBatch:
    def test_column_mismatch(self):
        with pytest.raises(ShapeError):
            LabeledBatch(inputs=np.zeros((2, 3)), targets=np.zeros((1, 4)), seed=0,
                         spec=DataModelSpec(kind="noise", dim=2))

    def test_r2_perfect_fit(self):
        y = np.linspace(0, 1, 10)
        assert r2_score(y, y) == 1.0

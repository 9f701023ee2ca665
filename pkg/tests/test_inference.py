import math

import numpy as np
import pytest

from flatprior import fieldops, hierarchy
from flatprior.errors import ConvergenceError, DomainError, StaleSamplesError
from flatprior.gpmodel import SmoothnessHyper, SpectralGPModel
from flatprior.inference import (
    DEEP, FLAT, DeepSpectrumKL, FlatSpectrumKL, InferenceConfig, draw_kl_samples,
    gp_flat_map, hierarchy_map, initial_tau, minimize_spectrum, numerical_gradient, rms_error, run_alternating,
    run_deep, run_flat, run_inference, sample_posterior, sample_posterior_flat, wiener_filter, wiener_filter_flat,
)


def make_model(n_side=8, n_points=20, noise=0.5, seed=0, mask=None, data=None, n_bins=None):
    rng = np.random.default_rng(seed)
    binning = fieldops.build_k_grid(fieldops.Grid2D(n_side), n_bins)
    if mask is None:
        mask = np.sort(rng.choice(n_side * n_side, n_points, replace=False))
    if data is None:
        data = rng.standard_normal(len(mask))
    return SpectralGPModel(binning, mask, data, noise, SmoothnessHyper(3.0, 10.0))


def dense_posterior(model, tau):
    S = fieldops.to_dense(model.covariance(tau))
    R = fieldops.to_dense(model.response_operator())
    D = np.linalg.inv(R.T @ R / model.noise_var + np.linalg.inv(S))
    return D, D @ model.j


class TestWienerFilter:
    def test_empty_mask(self):
        m = make_model(mask=np.array([], dtype=int))
        np.testing.assert_array_equal(wiener_filter(m, np.zeros(m.n_bins)).m, 0.0)

    def test_scalar_posterior(self):
        # white prior with variance e^c: each pixel is an independent scalar problem
        c, d, noise = 0.7, 1.3, 0.4
        m = make_model(mask=np.array([11]), data=np.array([d]), noise=noise)
        mean = wiener_filter(m, np.full(m.n_bins, c), cg_tol=1e-12).m
        expected = math.exp(c) / (math.exp(c) + noise ** 2) * d
        assert mean[11] == pytest.approx(expected, rel=1e-10)
        assert np.max(np.abs(np.delete(mean, 11))) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_16(self, seed):
        rng = np.random.default_rng(seed)
        m = make_model(n_side=16, n_points=int(rng.integers(10, 200)), noise=0.1 + rng.random(), seed=seed)
        tau = rng.standard_normal(m.n_bins)
        _, ref = dense_posterior(m, tau)
        res = wiener_filter(m, tau)
        assert res.residual <= 1e-7
        assert np.linalg.norm(res.m - ref) / np.linalg.norm(ref) < 1e-6

    def test_budget_error_carries_iterate(self):
        m = make_model(n_side=16, n_points=100, noise=0.01)
        with pytest.raises(ConvergenceError) as exc:
            wiener_filter(m, np.linspace(-5, 5, m.n_bins), cg_tol=1e-14, cg_maxiter=2)
        assert exc.value.best.shape == (m.npix,)

    def test_flat_mean_equivalence(self):
        m = make_model(n_side=16, n_points=80, noise=0.2, seed=3)
        tau = np.random.default_rng(4).standard_normal(m.n_bins)
        zeta = m.zeta_from_tau(tau)
        deep = wiener_filter(m, tau, cg_tol=1e-12).m
        m_xi = wiener_filter_flat(m, zeta, cg_tol=1e-12).m
        flat = m.H(m.amplitudes(tau) * m_xi)
        assert np.linalg.norm(flat - deep) / np.linalg.norm(deep) < 1e-6


class TestSampling:
    def test_deterministic(self):
        m = make_model()
        tau = np.zeros(m.n_bins)
        a = sample_posterior(m, tau, seed=3, iteration=2, index=1)
        b = sample_posterior(m, tau, seed=3, iteration=2, index=1)
        c = sample_posterior(m, tau, seed=3, iteration=2, index=2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_prior_bin_variances(self):
        m = make_model(mask=np.array([], dtype=int))
        tau = np.linspace(-1, 1, m.n_bins)
        n = 10_000
        power = np.zeros(m.n_bins)
        for i in range(n):
            x = sample_posterior(m, tau, seed=0, index=i)
            power += m.collect(m.H(x) ** 2)
        est = power / (n * m.mult)
        se = np.exp(tau) * np.sqrt(2.0 / (n * m.mult))
        assert np.all(np.abs(est - np.exp(tau)) < 5 * se)

    def test_posterior_diagonal(self):
        m = make_model(noise=0.3)
        tau = 0.5 * np.random.default_rng(5).standard_normal(m.n_bins)
        D, _ = dense_posterior(m, tau)
        n = 10_000
        xs = np.stack([sample_posterior(m, tau, seed=1, index=i) for i in range(n)])
        var = np.mean(xs ** 2, axis=0)
        se = np.diag(D) * math.sqrt(2.0 / n)
        assert np.all(np.abs(var - np.diag(D)) < 5 * se)

    def test_flat_samples_map_to_deep_covariance(self):
        m = make_model(noise=0.3)
        tau = 0.5 * np.random.default_rng(6).standard_normal(m.n_bins)
        D, _ = dense_posterior(m, tau)
        a = m.amplitudes(tau)
        n = 10_000
        xs = np.stack([m.H(a * sample_posterior_flat(m, m.zeta_from_tau(tau), seed=2, index=i)) for i in range(n)])
        var = np.mean(xs ** 2, axis=0)
        assert np.all(np.abs(var - np.diag(D)) < 5 * np.diag(D) * math.sqrt(2.0 / n))

    def test_noise_free_limit(self):
        m = make_model(mask=np.arange(64), noise=1e-5)
        x = sample_posterior(m, np.zeros(m.n_bins), seed=0)
        assert np.max(np.abs(x)) < 1e-4


class TestKL:
    def setup_method(self):
        self.m = make_model(n_bins=8)
        self.tau = 0.3 * np.random.default_rng(7).standard_normal(self.m.n_bins)
        self.mean = wiener_filter(self.m, self.tau).m

    def test_deterministic_remainder(self):
        b = fieldops.build_k_grid(fieldops.Grid2D(8))
        m = SpectralGPModel(b, np.array([3, 9]), np.zeros(2), 1.0)
        tau = np.random.default_rng(8).standard_normal(b.n_bins)
        samples = draw_kl_samples(m, tau, DEEP, 2, seed=0)
        samples.residuals[:] = 0.0
        kl = DeepSpectrumKL(m, np.zeros(64), tau, samples)
        assert kl(tau) == pytest.approx(0.5 * m.mult @ tau + m.smooth.information(tau), rel=1e-12)
        assert kl(np.zeros(b.n_bins)) == 0.0

    def test_deep_gradient(self):
        samples = draw_kl_samples(self.m, self.tau, DEEP, 3, seed=1)
        kl = DeepSpectrumKL(self.m, self.mean, self.tau, samples)
        num = numerical_gradient(kl, self.tau, 1e-5)
        ana = kl.value_and_grad(self.tau)[1]
        assert np.max(np.abs(num - ana) / np.maximum(np.abs(ana), 1e-3 * np.max(np.abs(ana)))) < 1e-4

    def test_flat_gradient(self):
        zeta = self.m.zeta_from_tau(self.tau)
        m_xi = wiener_filter_flat(self.m, zeta).m
        samples = draw_kl_samples(self.m, zeta, FLAT, 3, seed=1)
        kl = FlatSpectrumKL(self.m, m_xi, zeta, samples)
        num = numerical_gradient(kl, zeta, 1e-5)
        ana = kl.value_and_grad(zeta)[1]
        assert np.max(np.abs(num - ana) / np.maximum(np.abs(ana), 1e-3 * np.max(np.abs(ana)))) < 1e-4

    def test_stale_samples(self):
        samples = draw_kl_samples(self.m, self.tau, DEEP, 1, seed=0)
        with pytest.raises(StaleSamplesError):
            DeepSpectrumKL(self.m, self.mean, self.tau + 0.1, samples)
        with pytest.raises(StaleSamplesError):
            FlatSpectrumKL(self.m, self.mean, self.m.zeta_from_tau(self.tau), samples)

    def test_minimize_decreases(self):
        samples = draw_kl_samples(self.m, self.tau, DEEP, 4, seed=2)
        kl = DeepSpectrumKL(self.m, self.mean, self.tau, samples)
        res = minimize_spectrum(kl, self.tau, 20)
        assert res.fun <= kl(self.tau)
        assert np.all(np.diff(res.history) <= 0)

    def test_optimum_unchanged(self):
        b = fieldops.build_k_grid(fieldops.Grid2D(8))
        m = SpectralGPModel(b, np.array([], dtype=int), np.array([]), 1.0)
        zeta = np.zeros(b.n_bins)
        samples = draw_kl_samples(m, zeta, FLAT, 1, seed=0)
        samples.residuals[:] = 0.0
        res = minimize_spectrum(FlatSpectrumKL(m, np.zeros(64), zeta, samples), zeta)
        assert res.nit == 0
        np.testing.assert_array_equal(res.x, zeta)

    def test_quadratic_terminates_within_bins(self):
        sm = self.m.smooth
        tau0 = np.random.default_rng(9).standard_normal(sm.n_bins)

        class Quadratic:
            def value_and_grad(self, tau):
                return sm.information(tau), sm.inverse_kernel_apply(tau)

        res = minimize_spectrum(Quadratic(), tau0, inner_iterations=sm.n_bins, gtol=1e-12)
        assert res.nit <= sm.n_bins
        assert np.max(np.abs(res.x)) < 1e-8


class TestLoops:
    CFG = InferenceConfig(outer_iterations=4, n_sample_pairs=2, inner_iterations=5, seed=3)

    def test_records(self):
        m = make_model()
        ref = wiener_filter(m, np.zeros(m.n_bins)).m
        state, recs = run_deep(m, self.CFG, m_ref=ref)
        assert [r.iteration for r in recs] == [1, 2, 3, 4]
        assert all(r.eps >= 0 and r.mode == DEEP for r in recs)
        assert recs[-1].eps == pytest.approx(rms_error(state.m.ravel(), ref), rel=1e-12)
        assert state.m.shape == (8, 8)
        assert state.coordinate_mode == DEEP

    @pytest.mark.parametrize("runner", [run_deep, run_flat, run_alternating])
    def test_deterministic(self, runner):
        m = make_model()
        ref = np.zeros(m.npix)
        _, a = runner(m, self.CFG, m_ref=ref)
        _, b = runner(m, self.CFG, m_ref=ref)
        assert [r.eps for r in a] == [r.eps for r in b]
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.spectrum, rb.spectrum)

    def test_degenerate_schedules(self):
        m = make_model()
        ref = np.zeros(m.npix)
        for sched, runner in [((0, 3), run_flat), ((3, 0), run_deep)]:
            cfg = InferenceConfig(outer_iterations=4, n_sample_pairs=2, inner_iterations=5, seed=3, schedule=sched)
            _, alt = run_alternating(m, cfg, m_ref=ref)
            _, pure = runner(m, cfg, m_ref=ref)
            assert [(r.eps, r.mode) for r in alt] == [(r.eps, r.mode) for r in pure]

    def test_alternating_switches(self):
        m = make_model()
        cfg = InferenceConfig(outer_iterations=6, n_sample_pairs=2, inner_iterations=5, schedule=(1, 2))
        _, recs = run_alternating(m, cfg, m_ref=np.zeros(m.npix))
        assert [r.mode for r in recs] == [DEEP, FLAT, FLAT, DEEP, FLAT, FLAT]

    def test_fixed_truth_interpolates(self):
        m = make_model(mask=np.arange(64), noise=1e-6, seed=4)
        cfg = InferenceConfig(outer_iterations=1, n_sample_pairs=1, fix_spectrum=True, cg_tol=1e-12)
        for mode in (DEEP, FLAT):
            state, recs = run_inference(m, cfg, mode, m_ref=m.data, tau_init=np.zeros(m.n_bins))
            np.testing.assert_allclose(state.m.ravel(), m.data, atol=1e-8)
            assert recs[0].eps < 1e-8

    def test_empty_mask(self):
        m = make_model(mask=np.array([], dtype=int))
        state, _ = run_deep(m, self.CFG, m_ref=np.zeros(m.npix))
        np.testing.assert_array_equal(state.m, 0.0)
        state, _ = run_flat(m, self.CFG, m_ref=np.zeros(m.npix))
        np.testing.assert_array_equal(state.m_xi, 0.0)
        # prior-only flat KL has its minimum at zeta = 0
        assert np.max(np.abs(state.tau_star)) < 1e-6

    def test_state_covariance(self):
        m = make_model()
        state, _ = run_deep(m, self.CFG)
        D = state.D
        rng = np.random.default_rng(10)
        x, y = rng.standard_normal(m.npix), rng.standard_normal(m.npix)
        assert D.matvec(x) @ y == pytest.approx(x @ D.matvec(y), rel=1e-5)
        assert x @ D.matvec(x) > 0

    def test_initial_tau(self):
        m = make_model(data=np.array([1.0, 3.0] * 10))
        np.testing.assert_allclose(initial_tau(m), 0.0, atol=1e-15)
        assert np.all(initial_tau(make_model(mask=np.array([4]))) == 0)

    def test_bad_config(self):
        with pytest.raises(DomainError):
            InferenceConfig(schedule=(0, 0))
        with pytest.raises(DomainError):
            InferenceConfig(n_sample_pairs=0)
        with pytest.raises(DomainError):
            run_inference(make_model(), self.CFG, "sideways")


class TestRmsError:
    def test_examples(self):
        x = np.random.default_rng(11).standard_normal((4, 4))
        assert rms_error(x, x) == 0.0
        e = np.zeros((4, 4))
        e[1, 2] = 1.0
        assert rms_error(x + e, x) == pytest.approx(1.0)

    def test_sum_of_squares(self):
        rng = np.random.default_rng(12)
        a, b = rng.standard_normal(30), rng.standard_normal(30)
        assert rms_error(a, b) == pytest.approx(math.sqrt(sum((u - v) ** 2 for u, v in zip(a, b))), rel=1e-12)

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            rms_error(np.zeros(4), np.zeros(5))


class TestMap:
    def test_null_likelihood_gives_medians(self):
        model = hierarchy.HierarchicalModel((hierarchy.exponential_layer(2.0), hierarchy.gaussian_layer(1.5, 3.0)))
        theta, res = hierarchy_map(model)
        np.testing.assert_allclose(res.x, 0.0, atol=1e-6)
        np.testing.assert_allclose(theta, [math.log(2) / 2, 1.5], atol=1e-6)

    def test_strong_data_coordinates_agree(self):
        model = hierarchy.exponential_gaussian_model(0.0, 1.0)

        def lik(theta):
            return 0.5 * ((theta[0] - 1.3) ** 2 + (theta[1] - 0.4) ** 2) / 1e-4

        flat, _ = hierarchy_map(model, lik)
        deep, _ = hierarchy_map(model, lik, coordinates="deep", x0=np.array([1.0, 0.0]))
        np.testing.assert_allclose(flat, deep, atol=1e-3)

    def test_gp_flat_map_stationary(self):
        m = make_model(n_bins=4)
        (xi, zeta), res = gp_flat_map(m, gtol=1e-6, maxiter=500)
        g = np.concatenate(m.flat_grad(xi, zeta))
        assert np.max(np.abs(g)) < 1e-6

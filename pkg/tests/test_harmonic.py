import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate, special, stats

from approxhsmm import FrequencySamplerConfig, periodogram, sample_frequency_posterior
from approxhsmm.harmonic import (PeriodogramProposal, beta_conditional, design,
                                 sigma2_conditional)


def exact_frequency_posterior(y, grid, sigma2_beta=5.0, xi0=4.0, tau0=1.0):
    """Frequency posterior on a grid, coefficients integrated analytically and
    the noise variance by quadrature on a log grid."""
    T = y.size
    t = np.arange(1, T + 1)
    log_s2 = np.linspace(math.log(0.2 * y.var()), math.log(5 * y.var()), 200)
    s2 = np.exp(log_s2)
    out = np.empty(grid.size)
    for i, w in enumerate(grid):
        X = design(w, t)
        XtX, Xty, yy = X.T @ X, X.T @ y, y @ y
        terms = np.empty(s2.size)
        for k, v in enumerate(s2):
            A = np.eye(2) / sigma2_beta + XtX / v
            quad = yy / v - Xty @ np.linalg.solve(A, Xty) / v ** 2
            logdet = T * math.log(v) + np.linalg.slogdet(A)[1] + 2 * math.log(sigma2_beta)
            prior = -(xi0 / 2 + 1) * math.log(v) - tau0 / (2 * v)
            terms[k] = -0.5 * (quad + logdet) + prior + math.log(v)
        out[i] = special.logsumexp(terms)
    return np.exp(out - special.logsumexp(out))


class TestPeriodogram:
    def test_constant_series(self):
        I = periodogram(np.full(32, 2.0))
        assert I[0] == pytest.approx(32 * 4.0)
        npt.assert_allclose(I[1:], 0.0, atol=1e-20)

    def test_pure_cosine(self):
        t = np.arange(1, 65)
        I = periodogram(np.cos(2 * np.pi * 4 * t / 64))
        assert I[4] == pytest.approx(16.0, rel=1e-12)
        assert I[60] == pytest.approx(16.0, rel=1e-12)
        mask = np.ones(64, dtype=bool)
        mask[[4, 60]] = False
        npt.assert_allclose(I[mask], 0.0, atol=1e-20)

    def test_fft_matches_direct_sum(self):
        y = np.random.default_rng(0).normal(size=101)
        npt.assert_allclose(periodogram(y, "fft"), periodogram(y, "direct"), rtol=1e-9)
        t = np.arange(1, 102)
        h = 7
        direct = abs(np.sum(y * np.exp(-2j * np.pi * t * h / 101))) ** 2 / 101
        assert periodogram(y)[h] == pytest.approx(direct, rel=1e-12)


class TestConditionals:
    def test_coefficients_tend_to_least_squares(self):
        rng = np.random.default_rng(1)
        t = np.arange(1, 201.0)
        y = 1.5 * np.cos(2 * np.pi * 0.04 * t) + rng.normal(size=200)
        mean, V = beta_conditional(0.04, y, t, 1.0, 1e12)
        ols = np.linalg.lstsq(design(0.04, t), y, rcond=None)[0]
        npt.assert_allclose(mean, ols, rtol=1e-8)
        X = design(0.04, t)
        npt.assert_allclose(V, np.linalg.inv(X.T @ X), rtol=1e-8)

    def test_noise_variance_matches_quadrature(self):
        rng = np.random.default_rng(2)
        t = np.arange(1, 51.0)
        y = rng.normal(size=50)
        beta = np.array([0.3, -0.2])
        shape, scale = sigma2_conditional(0.05, y, t, beta, 4.0, 1.0)
        rss = float(np.sum((y - design(0.05, t) @ beta) ** 2))

        def kernel(v):
            # likelihood times the InvGamma(2, 1/2) prior
            return v ** (-25) * math.exp(-rss / (2 * v)) * v ** (-3) * math.exp(-0.5 / v)

        opts = dict(epsabs=0, epsrel=1e-12, limit=200)
        mass = integrate.quad(kernel, 0, 20, **opts)[0]
        mean = integrate.quad(lambda v: v * kernel(v), 0, 20, **opts)[0] / mass
        assert shape == 27.0
        assert mean == pytest.approx(scale / (shape - 1), rel=1e-7)


class TestProposal:
    def test_density_integrates_to_one(self):
        I = periodogram(np.random.default_rng(3).normal(size=200))
        prop = PeriodogramProposal(I, 200, 0.1)
        grid = np.linspace(1e-7, 0.1 - 1e-7, 200_001)
        dens = np.exp([prop.logpdf(w) for w in grid])
        assert integrate.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)
        draws = np.array([prop.sample(np.random.default_rng(k)) for k in range(200)])
        assert np.all((draws >= 0) & (draws < 0.1))

    @pytest.mark.parametrize("pi_omega, used, unused", [(1.0, "periodogram", "random_walk"),
                                                        (0.0, "random_walk", "periodogram")])
    def test_forced_branches(self, pi_omega, used, unused):
        y = np.random.default_rng(4).normal(size=100)
        cfg = FrequencySamplerConfig(pi_omega=pi_omega)
        r = sample_frequency_posterior(y, 500, cfg, seed=0)
        assert math.isnan(getattr(r, f"acceptance_{unused}"))
        assert 0.0 < getattr(r, f"acceptance_{used}") <= 1.0
        assert r.acceptance_rate == pytest.approx(getattr(r, f"acceptance_{used}"))


class TestFrequencySampler:
    def test_agrees_with_exact_posterior(self):
        rng = np.random.default_rng(1)
        t = np.arange(1, 151)
        y = 0.6 * np.cos(2 * np.pi * 0.023 * t) + rng.normal(size=150)
        y -= y.mean()
        grid = (np.arange(2000) + 0.5) / 2000 * 0.1
        exact = exact_frequency_posterior(y, grid)
        edges = np.linspace(0, 0.1, 41)
        exact_hist = np.bincount(np.digitize(grid, edges) - 1, weights=exact, minlength=40)
        r = sample_frequency_posterior(y, 20_000, seed=10)
        hist = np.histogram(r.omega_draws, edges)[0] / r.omega_draws.size
        assert 0.5 * np.abs(exact_hist - hist).sum() < 0.05
        assert r.omega_hat == pytest.approx(np.sum(grid * exact), abs=2e-4)

    def test_seeded_and_summarised(self, tmp_path):
        y = np.random.default_rng(5).normal(size=120)
        a = sample_frequency_posterior(y, 300, seed=3)
        b = sample_frequency_posterior(y, 300, seed=3)
        npt.assert_array_equal(a.omega_draws, b.omega_draws)
        assert a.omega_draws.size == 240 and a.n_burn_in == 60
        assert set(a.summary()) >= {"omega_hat", "omega_ci95", "acceptance_rate"}
        a.to_csv(tmp_path / "d.csv")
        assert np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1).shape == (240, 4)

    def test_rejects_short_runs(self):
        with pytest.raises(ValueError):
            sample_frequency_posterior(np.zeros(10) + np.arange(10), 50)

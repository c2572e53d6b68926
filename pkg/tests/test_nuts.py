import math

import numpy as np
import numpy.testing as npt
import pytest

from approxhsmm.diagnostics import effective_sample_size, split_chains, split_rhat
from approxhsmm.nuts import DualAveraging, WindowedAdaptation, nuts_sample


def gaussian_target(mean, cov):
    prec = np.linalg.inv(cov)

    def logp_grad(x):
        d = x - mean
        return -0.5 * d @ prec @ d, -prec @ d
    return logp_grad


def ar1_chains(phi, n_chains, n, rng):
    x = np.empty((n_chains, n))
    x[:, 0] = rng.normal(size=n_chains) / math.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + rng.normal(size=n_chains)
    return x


class TestSampler:
    def test_correlated_normal(self):
        mean = np.array([1.0, -2.0])
        cov = np.array([[1.0, 0.8], [0.8, 2.0]])
        res = nuts_sample(gaussian_target(mean, cov), np.zeros(2), 1000, 10_000,
                          np.random.default_rng(0))
        x = res.samples
        for i in range(2):
            se = math.sqrt(cov[i, i] / effective_sample_size(x[:, i][None, :]))
            assert abs(x[:, i].mean() - mean[i]) < 3 * se
        npt.assert_allclose(np.cov(x.T), cov, rtol=0.05, atol=0.05)
        assert not res.divergent.any()
        assert 0.6 < res.accept_stat.mean() < 0.95

    def test_conjugate_normal_mean(self):
        rng = np.random.default_rng(1)
        data = rng.normal(0.7, 1.0, size=20)
        # N(0, 1) prior and unit-variance likelihood
        post_var = 1 / (1 + data.size)
        post_mean = post_var * data.sum()

        def logp_grad(x):
            return (-0.5 * x[0] ** 2 - 0.5 * np.sum((data - x[0]) ** 2),
                    np.array([-x[0] + np.sum(data - x[0])]))

        res = nuts_sample(logp_grad, np.array([3.0]), 500, 5000, np.random.default_rng(2))
        draws = res.samples[:, 0]
        se = math.sqrt(post_var / effective_sample_size(draws[None, :]))
        assert abs(draws.mean() - post_mean) < 3 * se
        assert draws.var() == pytest.approx(post_var, rel=0.1)

    def test_metric_adapts_to_scales(self):
        scales = np.array([0.01, 1.0, 100.0])
        res = nuts_sample(gaussian_target(np.zeros(3), np.diag(scales ** 2)), np.ones(3),
                          1000, 200, np.random.default_rng(3))
        npt.assert_allclose(res.inv_metric / scales ** 2, 1.0, rtol=0.5)

    def test_reproducible(self):
        target = gaussian_target(np.zeros(2), np.eye(2))
        a = nuts_sample(target, np.zeros(2), 100, 100, np.random.default_rng(5))
        b = nuts_sample(target, np.zeros(2), 100, 100, np.random.default_rng(5))
        npt.assert_array_equal(a.samples, b.samples)

    def test_rejects_infinite_start(self):
        with pytest.raises(ValueError):
            nuts_sample(lambda x: (-np.inf, None), np.zeros(1), 10, 10,
                        np.random.default_rng(0))


class TestAdaptation:
    def test_dual_averaging_reaches_target(self):
        # acceptance decreasing in step size: a(e) = exp(-e)
        da = DualAveraging(target=0.8)
        da.restart(1.0)
        eps = 1.0
        for _ in range(3000):
            eps = da.update(math.exp(-eps))
        assert da.final_step_size == pytest.approx(-math.log(0.8), rel=0.02)

    def test_window_schedule(self):
        w = WindowedAdaptation(1000)
        ends = [i for i in range(1000) if w.advance()]
        assert ends == [99, 149, 249, 449, 949]


class TestDiagnostics:
    def test_split_chains(self):
        x = np.arange(10.0).reshape(2, 5)
        npt.assert_array_equal(split_chains(x), [[0, 1], [5, 6], [3, 4], [8, 9]])

    def test_rhat_of_independent_chains(self):
        x = np.random.default_rng(0).normal(size=(4, 2000))
        assert split_rhat(x) < 1.01

    def test_rhat_formula(self):
        z = split_chains(np.random.default_rng(1).normal(size=(3, 40)))
        n = z.shape[1]
        W = np.mean(np.var(z, axis=1, ddof=1))
        B = n * np.var(z.mean(axis=1), ddof=1)
        assert split_rhat(np.random.default_rng(1).normal(size=(3, 40))) == pytest.approx(
            math.sqrt(((n - 1) / n * W + B / n) / W), rel=1e-12)

    def test_rhat_detects_disagreement(self):
        x = np.random.default_rng(2).normal(size=(4, 1000))
        x[0] += 2.0
        assert split_rhat(x) > 1.1
        trend = np.random.default_rng(3).normal(size=(4, 1000)) + np.linspace(0, 3, 1000)
        assert split_rhat(trend) > 1.1

    @pytest.mark.parametrize("phi", [0.0, 0.5, 0.9])
    def test_ess_matches_ar1_theory(self, phi):
        x = ar1_chains(phi, 4, 20_000, np.random.default_rng(4))
        expected = x.size * (1 - phi) / (1 + phi)
        assert effective_sample_size(x) == pytest.approx(expected, rel=0.1)

    def test_antithetic_chain_exceeds_draw_count(self):
        x = ar1_chains(-0.5, 4, 20_000, np.random.default_rng(5))
        assert effective_sample_size(x) > x.size

import dataclasses
import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate, special, stats

from approxhsmm import InfeasiblePriorError, ModelSpec, ParamVector, PriorConfig
from approxhsmm.priors import (calibrate_comparable_priors, gamma_logpdf,
                               hmm_mean_dwell_moments, log_prior, log_prior_and_grad,
                               log_prior_terms)

PI3 = np.array([[0, .3, .7], [.2, 0, .8], [.1, .9, 0]])


class TestComponents:
    def test_gamma_dwell_density(self):
        expected = 0.01 * math.log(0.01) - special.gammaln(0.01) - 0.01
        assert gamma_logpdf(1.0, 0.01, 0.01) == pytest.approx(expected, rel=1e-14)
        assert gamma_logpdf(1.0, 0.01, 0.01) == pytest.approx(
            stats.gamma.logpdf(1.0, 0.01, scale=100.0), rel=1e-12)
        mass, _ = integrate.quad(lambda x: math.exp(gamma_logpdf(x, 2.5, 0.3)), 0, 200)
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_uniform_dirichlet_is_flat(self):
        spec = ModelSpec.uniform(4, "poisson", 2)
        rng = np.random.default_rng(0)
        values = []
        for _ in range(3):
            pi = np.zeros((4, 4))
            for j in range(4):
                pi[j, np.arange(4) != j] = rng.dirichlet(np.ones(3))
            p = ParamVector.gaussian(pi, [1, 2, 3, 4], [0, 1, 2, 3], [1, 1, 1, 1])
            values.append(log_prior_terms(spec, p)["pi[1]"])
        npt.assert_allclose(values, special.gammaln(3), atol=1e-13)

    def test_total_is_sum_of_independent_terms(self):
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(3, 3, 3))
        p = ParamVector.gaussian(PI3, [4.0, 2.5, 1.5], [-1.0, 0.5, 2.0], [0.7, 1.3, 2.0],
                                 rho=[np.nan, 0.8, np.nan])
        expected = 3 * math.log(special.gamma(2))  # flat Dirichlet over 2 categories
        expected += sum(stats.gamma.logpdf(l, 0.01, scale=100) for l in p.lam)
        # 1 / rho ~ Gamma(2, 2), transformed to rho
        expected += stats.gamma.logpdf(1 / 0.8, 2, scale=0.5) - 2 * math.log(0.8)
        expected += stats.norm.logpdf(p.location, 0, 10).sum()
        expected += stats.invgamma.logpdf(p.sigma2, 2, scale=0.5).sum()
        expected += math.log(6)  # restriction to the ordered region
        assert log_prior(spec, p) == pytest.approx(expected, abs=1e-12)

    def test_outside_support(self):
        spec = ModelSpec.uniform(3, "poisson", 3)
        unordered = ParamVector.gaussian(PI3, [1, 1, 1], [0, 2, 1], [1, 1, 1])
        assert log_prior(spec, unordered) == -math.inf
        assert np.isfinite(log_prior(spec.replace(ordered=False), unordered))

    def test_gradient_matches_differences(self):
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(3, 3, 3))
        p = ParamVector.gaussian(PI3, [4.0, 2.5, 1.5], [-1.0, 0.5, 2.0], [0.7, 1.3, 2.0],
                                 rho=[np.nan, 0.8, np.nan])
        _, g = log_prior_and_grad(spec, p)
        h = 1e-6
        for name in ("lam", "location", "sigma2"):
            for j in range(3):
                up, dn = (getattr(p, name).copy() for _ in range(2))
                up[j] += h
                dn[j] -= h
                f = [log_prior(spec, dataclasses.replace(p, **{name: v})) for v in (up, dn)]
                assert getattr(g, name)[j] == pytest.approx((f[0] - f[1]) / (2 * h),
                                                            rel=1e-6, abs=1e-8)


class TestComparable:
    def test_mean_dwell_moments(self):
        assert hmm_mean_dwell_moments(2.0, 3.0)[0] == pytest.approx(2.0)
        mean, var = hmm_mean_dwell_moments(2.0, 4.0)
        assert mean == pytest.approx(5 / 3, rel=1e-14)
        assert var == pytest.approx(5 / 9, rel=1e-13)

    def test_mean_dwell_moments_by_simulation(self):
        g = np.random.default_rng(0).beta(2.0, 4.0, size=1_000_000)
        tau = 1 / (1 - g)
        mean, var = hmm_mean_dwell_moments(2.0, 4.0)
        assert abs(tau.mean() - mean) < 3 * tau.std() / 1000
        sq = (tau - tau.mean()) ** 2
        assert abs(sq.mean() - var) < 3 * sq.std() / 1000

    def test_concentration_limit(self):
        means = [hmm_mean_dwell_moments(0.5 * b, b)[0] for b in (10, 100, 1000, 10000)]
        assert means[-1] == pytest.approx(1.5, rel=1e-3)
        assert hmm_mean_dwell_moments(3.0, 50.0)[0] > hmm_mean_dwell_moments(2.0, 50.0)[0]

    @pytest.mark.parametrize("mean, var, a0, b0", [(91, 36, 225, 2.5),
                                                   (25, 324, 16 / 9, 2 / 27)])
    def test_gamma_targets(self, mean, var, a0, b0):
        c = calibrate_comparable_priors([mean, mean], [var, var])
        npt.assert_allclose(c.gamma_dwell, [[a0, b0]] * 2, rtol=1e-13)

    def test_round_trip(self):
        m, V = np.array([91.0, 25.0, 4.0]), np.array([36.0, 324.0, 2.0])
        c = calibrate_comparable_priors(m, V)
        for j in range(3):
            v_jj = c.hmm_dirichlet_v[j, j]
            beta = c.hmm_dirichlet_v[j].sum() - v_jj
            npt.assert_allclose(hmm_mean_dwell_moments(v_jj, beta), (m[j], V[j]), rtol=1e-8)

    def test_prior_predictive_dwell_moments(self):
        rng = np.random.default_rng(1)
        m, V = 4.0, 3.0
        c = calibrate_comparable_priors([m, m], [V, V])
        a0, b0 = c.gamma_dwell[0]
        lam = rng.gamma(a0, 1 / b0, size=1_000_000)
        d_poisson = 1 + rng.poisson(lam)
        rho = 1 / rng.gamma(2.0, 0.5, size=lam.size)
        d_nb = 1 + rng.negative_binomial(rho, rho / (rho + lam))
        v_jj, beta = c.hmm_dirichlet_v[0, 0], c.hmm_dirichlet_v[0, 1]
        g = rng.beta(v_jj, beta, size=lam.size)
        d_geo = rng.geometric(1 - g)
        for d in (d_poisson, d_nb, d_geo):
            assert abs(d.mean() - m) < 3 * d.std() / 1000

    def test_infeasible_targets(self):
        with pytest.raises(InfeasiblePriorError):
            calibrate_comparable_priors([1.0], [2.0])
        with pytest.raises(InfeasiblePriorError):
            calibrate_comparable_priors([3.0], [0.0])

    def test_prior_config_round_trip(self):
        cfg = calibrate_comparable_priors([4, 5], [2, 3]).apply(PriorConfig())
        back = PriorConfig.from_dict(cfg.to_dict())
        npt.assert_allclose(back.resolve(2).gamma_dwell, cfg.resolve(2).gamma_dwell)

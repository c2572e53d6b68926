import itertools
import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate, stats

from approxhsmm import (DwellDiagnosticConfig, ModelSpec, ParamVector, build_phi,
                        dwell_threshold_diagnostic, forecast_density, forecast_logscore_bayes,
                        forecast_logscore_frequentist, posterior_predictive_simulate,
                        pseudo_residuals, simulate_hsmm, viterbi)
from approxhsmm.embedding import stationary_distribution

PI3 = np.array([[0, .3, .7], [.2, 0, .8], [.1, .9, 0]])


def expanded_model(spec, params):
    phi = build_phi(spec, params)
    dense = phi.to_dense()
    return dense, stationary_distribution(dense).pi0_star, phi.owner


def expanded_logdens(params, owner, y):
    return stats.norm.logpdf(np.asarray(y)[:, None], params.location[owner],
                             np.sqrt(params.sigma2[owner]))


def dense_filter(spec, params, y):
    dense, pi0, owner = expanded_model(spec, params)
    dens = np.exp(expanded_logdens(params, owner, y))
    alpha = pi0 * dens[0]
    alpha /= alpha.sum()
    for t in range(1, len(y)):
        alpha = (alpha @ dense) * dens[t]
        alpha /= alpha.sum()
    return alpha, dense, owner


class TestViterbi:
    def test_single_observation(self):
        spec = ModelSpec(dwell=("poisson", "poisson"), a=(2, 2))
        p = ParamVector.gaussian(None, [1, 1], [0, 5], [1, 1])
        assert viterbi(spec, p, [4.8]).state_path.tolist() == [1]

    def test_well_separated_blocks(self):
        spec = ModelSpec(dwell=("poisson", "poisson", "poisson"), a=(5, 5, 5))
        p = ParamVector.gaussian(PI3, [4, 4, 4], [0, 10, 20], [1, 1, 1])
        truth = np.repeat([0, 2, 1, 0, 1], [6, 4, 7, 5, 8])
        y = p.location[truth] + np.random.default_rng(0).normal(0, 0.3, truth.size)
        path = viterbi(spec, p, y)
        npt.assert_array_equal(path.state_path, truth)
        assert [s[:2] for s in path.segments()] == [(0, 6), (2, 4), (1, 7), (0, 5), (1, 8)]

    def test_brute_force(self):
        spec = ModelSpec(dwell=("poisson", "negbinomial"), a=(2, 2))
        p = ParamVector.gaussian(None, [1.5, 0.7], [0, 1.5], [1, 2], rho=[np.nan, 0.8])
        y = np.array([0.2, 1.9, 1.1, -0.4, 2.5])
        dense, pi0, owner = expanded_model(spec, p)
        le = expanded_logdens(p, owner, y)
        best, best_path = -np.inf, None
        with np.errstate(divide="ignore"):
            lphi, lpi0 = np.log(dense), np.log(pi0)
        for path in itertools.product(range(dense.shape[0]), repeat=y.size):
            s = lpi0[path[0]] + le[0, path[0]]
            for t in range(1, y.size):
                s += lphi[path[t - 1], path[t]] + le[t, path[t]]
            if s > best:
                best, best_path = s, path
        res = viterbi(spec, p, y)
        assert res.log_score == pytest.approx(best, abs=1e-10)
        npt.assert_array_equal(res.aggregate_path, best_path)
        npt.assert_array_equal(res.state_path, owner[list(best_path)])


class TestForecast:
    @pytest.fixture
    def setup(self):
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(4, 3, 2))
        p = ParamVector.gaussian(PI3, [3, 2, 1], [-1, 1, 3], [0.5, 1, 1.5],
                                 rho=[np.nan, 1.5, np.nan])
        y = simulate_hsmm(spec, p, 80, seed=3).y.y
        return spec, p, y

    def test_matches_dense_propagation(self, setup):
        spec, p, y = setup
        alpha, dense, owner = dense_filter(spec, p, y)
        fd = forecast_density(spec, p, y, 6)
        v = alpha
        for h in range(6):
            v = v @ dense
            npt.assert_allclose(fd.weights[h], np.bincount(owner, v, minlength=3), atol=1e-12)

    def test_densities_integrate_to_one(self, setup):
        spec, p, y = setup
        fd = forecast_density(spec, p, y, 5)
        for h in (1, 5):
            mass, _ = integrate.quad(lambda x: fd.pdf(h, x), -30, 30, limit=200)
            assert mass == pytest.approx(1.0, abs=1e-3)

    def test_single_draw_is_plug_in(self, setup):
        spec, p, y = setup
        train, test = y[:60], y[60:]
        assert forecast_logscore_bayes(spec, [p], train, test) == pytest.approx(
            forecast_logscore_frequentist(spec, p, train, test), abs=1e-10)

    def test_duplicate_draws(self, setup):
        spec, p, y = setup
        q = ParamVector.gaussian(PI3, [2, 2, 2], [-1.2, 0.8, 3.1], [0.6, 1, 1.4],
                                 rho=[np.nan, 1.0, np.nan])
        train, test = y[:60], y[60:]
        assert forecast_logscore_bayes(spec, [p, p, q, q], train, test) == pytest.approx(
            forecast_logscore_bayes(spec, [p, q], train, test), abs=1e-10)

    def test_rolling_first_step_equals_static(self, setup):
        spec, p, y = setup
        s = forecast_density(spec, p, y[:60], 5, y[60:65])
        r = forecast_density(spec, p, y[:60], 5, y[60:65], mode="rolling")
        npt.assert_allclose(r.weights[0], s.weights[0], atol=1e-12)
        # the rolling weight at step 2 is the one-step prediction from the filter at 61
        alpha, dense, owner = dense_filter(spec, p, y[:61])
        npt.assert_allclose(r.weights[1], np.bincount(owner, alpha @ dense, minlength=3),
                            atol=1e-12)


class TestPseudoResiduals:
    def test_identical_emissions_standardize(self):
        spec = ModelSpec(dwell=("poisson", "poisson"), a=(3, 3), ordered=False)
        p = ParamVector.gaussian(None, [2, 3], [1.0, 1.0], [4.0, 4.0])
        y = np.random.default_rng(0).normal(1, 2, 50)
        npt.assert_allclose(pseudo_residuals(spec, p, y), (y - 1) / 2, atol=1e-9)

    def test_relabelling(self):
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(3, 2, 2),
                         ordered=False)
        p = ParamVector.gaussian(PI3, [3, 2, 1], [-1, 1, 3], [0.5, 1, 1.5],
                                 rho=[np.nan, 1.5, np.nan])
        y = simulate_hsmm(spec, p, 100, seed=1).y.y
        order = [1, 2, 0]
        perm = ModelSpec(dwell=tuple(spec.dwell[i] for i in order),
                         a=tuple(spec.a[i] for i in order), ordered=False)
        npt.assert_allclose(pseudo_residuals(perm, p.permute(order), y),
                            pseudo_residuals(spec, p, y), atol=1e-9)

    def test_detects_misfit(self):
        spec = ModelSpec(dwell=("poisson", "poisson"), a=(10, 10))
        truth = ParamVector.gaussian(None, [5, 5], [0, 4], [1, 1])
        y = simulate_hsmm(spec, truth, 1000, seed=2).y.y
        assert stats.kstest(pseudo_residuals(spec, truth, y), "norm").pvalue > 0.01
        wrong = ParamVector.gaussian(None, [5, 5], [-1, 5], [0.3, 0.3])
        assert stats.kstest(pseudo_residuals(spec, wrong, y), "norm").pvalue < 1e-6


class TestPosteriorPredictive:
    def test_shapes_and_seeds(self):
        spec = ModelSpec(dwell=("poisson", "poisson"), a=(3, 3))
        draws = [ParamVector.gaussian(None, [2, 2], [0, 3], [1, 1]),
                 ParamVector.gaussian(None, [1, 4], [0, 5], [1, 1])]
        assert posterior_predictive_simulate(spec, draws, 20, 0).shape == (0, 20)
        a = posterior_predictive_simulate(spec, draws, 20, 3, seed=5)
        npt.assert_array_equal(a, posterior_predictive_simulate(spec, draws, 20, 3, seed=5))
        assert a.shape == (3, 20)
        assert not np.array_equal(a, posterior_predictive_simulate(spec, draws, 20, 3, seed=6))


class TestDwellDiagnostic:
    def test_short_dwells_pass(self):
        spec = ModelSpec(dwell=("poisson", "poisson"), a=(15, 15))
        truth = ParamVector.gaussian(None, [2, 3], [0, 4], [1, 1])
        y = simulate_hsmm(spec, truth, 600, seed=0).y.y
        rep = dwell_threshold_diagnostic(spec, y, DwellDiagnosticConfig(fit="mle", seed=1))
        assert rep.all_passed
        assert [s.recommendation for s in rep.states] == ["may decrease"] * 2
        d = rep.to_dict()
        assert d["all_passed"] and len(d["states"]) == 2

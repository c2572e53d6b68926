import itertools

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from approxhsmm import ModelSpec, ParamVector, SizeGuardError
from approxhsmm.embedding import build_phi, stationary_distribution
from approxhsmm.likelihood import (brute_force_loglik, exact_hsmm_loglik,
                                   log_likelihood, loglik_gradient, loglik_value_and_grad)
from approxhsmm.model import dwell_pmf, dwell_survival
from approxhsmm.transforms import ParamLayout

PI3 = np.array([[0, .3, .7], [.2, 0, .8], [.1, .9, 0]])
Y5 = np.array([0.1, 0.2, 2.9, 3.1, 0.0])


def hmm_forward(gamma, init, mu, sigma2, y):
    """Textbook scaled forward recursion of a Gaussian HMM."""
    dens = stats.norm.pdf(np.asarray(y)[:, None], mu, np.sqrt(sigma2))
    alpha = init * dens[0]
    ll = np.log(alpha.sum())
    alpha /= alpha.sum()
    for t in range(1, len(y)):
        alpha = (alpha @ gamma) * dens[t]
        ll += np.log(alpha.sum())
        alpha /= alpha.sum()
    return ll


def segmentation_loglik(spec, params, y, start):
    """Exact semi-Markov likelihood by enumerating labelled segmentations."""
    T, K = len(y), spec.K
    logf = stats.norm.logpdf(np.asarray(y)[:, None], params.location, np.sqrt(params.sigma2))
    terms = []
    for n_seg in range(1, T + 1):
        for cuts in itertools.combinations(range(1, T), n_seg - 1):
            bounds = (0,) + cuts + (T,)
            lengths = np.diff(bounds)
            for labels in itertools.product(range(K), repeat=n_seg):
                if any(labels[i] == labels[i + 1] for i in range(n_seg - 1)):
                    continue
                lp = np.log(start[labels[0]]) if start[labels[0]] > 0 else -np.inf
                for i, (j, d) in enumerate(zip(labels, lengths)):
                    fam = spec.dwell[j]
                    rho = params.rho_of(j) if fam.value == "negbinomial" else None
                    if i < n_seg - 1:
                        lp += np.log(dwell_pmf(fam, params.lam[j], rho, d))
                        lp += np.log(params.pi[j, labels[i + 1]])
                    else:
                        lp += np.log(dwell_survival(fam, params.lam[j], rho, d))
                    lp += logf[bounds[i]:bounds[i + 1], j].sum()
                terms.append(lp)
    return logsumexp(terms)


def random_params(rng, spec):
    K = spec.K
    pi = np.zeros((K, K))
    for j in range(K):
        pi[j, np.arange(K) != j] = rng.dirichlet(np.ones(K - 1))
    rho = None
    if spec.has_rho:
        rho = np.array([rng.uniform(0.3, 3) if d.value == "negbinomial" else np.nan
                        for d in spec.dwell])
    return ParamVector.gaussian(pi, rng.uniform(0.3, 4, K), np.sort(rng.normal(0, 2, K)),
                                rng.uniform(0.5, 2, K), rho=rho)


class TestForward:
    def test_single_observation_is_mixture(self):
        spec = ModelSpec(dwell=("poisson",) * 2, a=(1, 1))
        p = ParamVector.gaussian(None, [1.5, 0.5], [0, 3], [1, 2])
        pi0 = stationary_distribution(build_phi(spec, p)).pi0_star
        expected = np.log(np.sum(pi0 * stats.norm.pdf(1.2, [0, 3], np.sqrt([1, 2]))))
        assert log_likelihood(spec, p, [1.2]).log_likelihood == pytest.approx(expected,
                                                                            abs=1e-13)
        assert brute_force_loglik(spec, p, [1.2]) == pytest.approx(expected, abs=1e-13)

    def test_brute_force_small_instance(self):
        spec = ModelSpec(dwell=("poisson",) * 2, a=(2, 2))
        p = ParamVector.gaussian(None, [1, 1], [0, 3], [1, 1])
        ll = log_likelihood(spec, p, Y5).log_likelihood
        assert abs(ll - brute_force_loglik(spec, p, Y5)) < 1e-10

    def test_brute_force_label_symmetry(self):
        rng = np.random.default_rng(2)
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(2, 1, 2),
                         ordered=False)
        p = random_params(rng, spec)
        order = [2, 0, 1]
        spec_perm = ModelSpec(dwell=tuple(spec.dwell[i] for i in order),
                              a=tuple(spec.a[i] for i in order), ordered=False)
        y = rng.normal(size=5)
        assert brute_force_loglik(spec_perm, p.permute(order), y) == pytest.approx(
            brute_force_loglik(spec, p, y), abs=1e-12)

    def test_size_guard(self):
        spec = ModelSpec.uniform(3, "poisson", 10)
        p = ParamVector.gaussian(PI3, [1, 2, 3], [0, 1, 2], [1, 1, 1])
        with pytest.raises(SizeGuardError):
            brute_force_loglik(spec, p, np.zeros(12))

    @pytest.mark.parametrize("seed", range(20))
    def test_geometric_matches_standard_hmm(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(2, 4))
        spec = ModelSpec.uniform(K, "geometric", int(rng.integers(1, 6)))
        p = random_params(rng, spec)
        gdiag = p.lam / (1 + p.lam)
        gamma = (1 - gdiag)[:, None] * p.pi + np.diag(gdiag)
        init = stationary_distribution(gamma).pi0_star
        y = rng.normal(0, 2, 40)
        ref = hmm_forward(gamma, init, p.location, p.sigma2, y)
        assert abs(log_likelihood(spec, p, y).log_likelihood - ref) < 1e-10
        assert abs(exact_hsmm_loglik(spec, p, y) - ref) < 1e-8

    def test_sparse_dense_and_scaling_agree(self):
        rng = np.random.default_rng(7)
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(12, 9, 4))
        p = random_params(rng, spec)
        y = rng.normal(0, 2, 300)
        sparse = log_likelihood(spec, p, y)
        assert abs(sparse.log_likelihood - log_likelihood(spec, p, y, "dense").log_likelihood
                   ) < 1e-12
        assert abs(sparse.log_likelihood - log_likelihood(spec, p, y, scaling="max")
                   .log_likelihood) < 1e-10
        assert sparse.log_likelihood == pytest.approx(sparse.log_scale.sum(), abs=1e-9)
        assert sparse.alpha_T.sum() == pytest.approx(1.0, abs=1e-12)


class TestExact:
    @pytest.mark.parametrize("start", [0, (0.2, 0.5, 0.3)])
    def test_segmentation_enumeration(self, start):
        rng = np.random.default_rng(11)
        spec = ModelSpec(dwell=("poisson", "negbinomial", "geometric"), a=(1, 1, 1),
                         initial=start)
        p = random_params(rng, spec)
        vec = np.eye(3)[start] if isinstance(start, int) else np.array(start)
        ref = segmentation_loglik(spec, p, Y5, vec)
        assert exact_hsmm_loglik(spec, p, Y5, max_dwell="full") == pytest.approx(ref,
                                                                                abs=1e-10)

    def test_approximation_converges(self):
        rng = np.random.default_rng(1)
        p = ParamVector.gaussian(PI3, [2, 5, 8], [0, 2, 4], [1, 1, 1])
        y = rng.normal(0, 2, 300)
        spec = ModelSpec.uniform(3, "poisson", 60)
        exact = exact_hsmm_loglik(spec, p, y)
        gaps = [abs(log_likelihood(spec.replace(a=(a,) * 3), p, y).log_likelihood - exact)
                for a in (2, 5, 10, 20, 40)]
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))
        assert abs(log_likelihood(spec, p, y).log_likelihood - exact) < 1e-6


class TestGradient:
    @pytest.mark.parametrize("dwell, emission", [
        (("poisson",) * 3, "gaussian"),
        (("negbinomial",) * 3, "gaussian"),
        (("geometric", "poisson", "negbinomial"), "harmonic"),
    ])
    def test_central_differences(self, dwell, emission):
        rng = np.random.default_rng(5)
        spec = ModelSpec(dwell=dwell, a=(4, 6, 3), emission=emission,
                         omega_hat=0.05 if emission == "harmonic" else None)
        layout = ParamLayout(spec)
        u = rng.normal(size=layout.size) * 0.5
        y = rng.normal(size=60) * 2
        g = loglik_gradient(spec, u, y)

        def f(v):
            return log_likelihood(spec, layout.constrain(v), y).log_likelihood

        h = 1e-5
        fd = np.array([(f(u + h * e) - f(u - h * e)) / (2 * h) for e in np.eye(layout.size)])
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-5

    def test_unoccupied_state_location(self):
        spec = ModelSpec(dwell=("poisson",) * 2, a=(3, 3))
        p = ParamVector.gaussian(None, [2, 2], [0, 1000], [1, 1])
        y = np.random.default_rng(0).normal(size=50)
        _, grad = loglik_value_and_grad(spec, p, y)
        assert abs(grad.location[1]) < 1e-8

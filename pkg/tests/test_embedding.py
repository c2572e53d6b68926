import numpy as np
import numpy.testing as npt
import pytest

from approxhsmm import ModelSpec, ParamVector, NoStationaryDistributionError
from approxhsmm.embedding import build_phi, hazard, hazard_table, stationary_distribution
from approxhsmm.model import DwellFamily, dwell_pmf, dwell_survival

PI3 = np.array([[0, .3, .7], [.2, 0, .8], [.1, .9, 0]])


def random_instance(rng, K, families, a):
    pi = rng.dirichlet(np.ones(K - 1), size=K)
    full = np.zeros((K, K))
    for j in range(K):
        full[j, np.arange(K) != j] = pi[j]
    lam = rng.uniform(0.5, 8.0, K)
    rho = None
    if "negbinomial" in families:
        rho = np.where(np.array(families) == "negbinomial", rng.uniform(0.3, 4.0, K), np.nan)
    spec = ModelSpec(dwell=families, a=a)
    return spec, ParamVector.gaussian(full, lam, np.sort(rng.normal(size=K)), np.ones(K),
                                      rho=rho)


class TestHazard:
    def test_geometric_is_memoryless(self):
        lam = 0.6 / 0.4
        for r in (1, 5, 50):
            assert hazard("geometric", lam, None, r) == pytest.approx(0.4, abs=1e-14)

    def test_poisson_first(self):
        assert hazard("poisson", 2.0, None, 1) == pytest.approx(np.exp(-2.0), rel=1e-13)

    def test_exhausted_survival(self):
        assert hazard("poisson", 1.0, None, 40) == 1.0

    def test_telescoping_reproduces_pmf(self):
        for family, lam, rho in [("poisson", 6.0, None), ("negbinomial", 4.0, 0.5),
                                 ("geometric", 3.0, None)]:
            a = 25
            h = hazard_table(DwellFamily(family), lam, rho, a)
            surv = np.concatenate([[1.0], np.cumprod(1 - h)])
            r = np.arange(1, a)
            npt.assert_allclose(surv[:-2] * h[:-1], dwell_pmf(family, lam, rho, r),
                                rtol=0, atol=1e-10)
            # the last expanded state keeps the tail mass
            npt.assert_allclose(surv[a - 1], dwell_survival(family, lam, rho, a), atol=1e-12)


class TestBuildPhi:
    def test_standard_hmm_reduction(self):
        spec = ModelSpec(dwell=("geometric",) * 2, a=(1, 1))
        params = ParamVector.gaussian(None, [0.7 / 0.3, 0.6 / 0.4], [0, 1], [1, 1])
        npt.assert_allclose(build_phi(spec, params).to_dense(), [[0.7, 0.3], [0.4, 0.6]],
                            atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_structure(self, seed):
        rng = np.random.default_rng(seed)
        spec, params = random_instance(rng, 3, ("poisson", "negbinomial", "geometric"),
                                       (4, 1, 6))
        phi = build_phi(spec, params)
        dense = phi.to_dense()
        npt.assert_allclose(dense.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(dense >= 0)
        assert phi.nnz <= spec.K * spec.n_expanded
        heads = set(phi.aggregate_offsets.tolist())
        for i in range(phi.dim):
            for col in np.flatnonzero(dense[i]):
                if phi.owner[col] != phi.owner[i]:
                    assert col in heads
            assert np.count_nonzero(dense[i]) <= spec.K

    def test_sparsity_at_thirty(self):
        spec = ModelSpec.uniform(3, "poisson", 30)
        phi = build_phi(spec, ParamVector.gaussian(PI3, [20, 30, 20], [5, 14, 30], [1, 4, 1]))
        assert phi.nnz <= 270
        assert 1 - phi.nnz / phi.dim ** 2 >= 1 - 270 / 8100

    def test_matvec_consistency(self):
        rng = np.random.default_rng(4)
        spec, params = random_instance(rng, 3, ("poisson",) * 3, (5, 3, 2))
        phi = build_phi(spec, params)
        v = rng.normal(size=phi.dim)
        npt.assert_allclose(phi.rmatvec(v), v @ phi.to_dense(), atol=1e-14)
        npt.assert_allclose(phi.matvec(v), phi.to_dense() @ v, atol=1e-14)


class TestStationary:
    def test_symmetric(self):
        st = stationary_distribution(np.array([[0.5, 0.5], [0.5, 0.5]]))
        npt.assert_allclose(st.pi0_star, [0.5, 0.5], atol=1e-14)

    def test_two_state_balance(self):
        st = stationary_distribution(np.array([[0.7, 0.3], [0.4, 0.6]]))
        npt.assert_allclose(st.pi0_star, [4 / 7, 3 / 7], atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_fixed_point(self, seed):
        rng = np.random.default_rng(10 + seed)
        spec, params = random_instance(rng, 4, ("negbinomial",) * 4, (3, 7, 2, 5))
        phi = build_phi(spec, params)
        x = stationary_distribution(phi).pi0_star
        assert x.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(x >= 0)
        assert np.max(np.abs(phi.rmatvec(x) - x)) < 1e-10

    def test_reducible_chain(self):
        with pytest.raises(NoStationaryDistributionError):
            stationary_distribution(np.eye(3))

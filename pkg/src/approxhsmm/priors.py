"""Prior densities and calibration of comparable dwell priors.

The prior factorizes over states into a Dirichlet on the off-diagonal
transition probabilities, a Gamma on the dwell rate, a Gamma on the inverse
negative binomial dispersion, normal priors on emission locations (and
harmonic coefficients) and inverse-gamma priors on emission variances.

Geometric states may instead carry a full Dirichlet vector ``v_j``, which is
the conjugate prior of a row of a standard HMM transition matrix. It induces
``g_j = lam_j / (1 + lam_j) ~ Beta(v_jj, sum_{k != j} v_jk)`` and a Dirichlet
on the off-diagonal probabilities.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .errors import DomainError, InfeasiblePriorError
from .likelihood import ParamGradient
from .model import DwellFamily, ModelSpec, ParamVector

LOG_2PI = math.log(2.0 * math.pi)


def _per_state(value, K, width, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and width and arr.shape == (width,):
        arr = np.broadcast_to(arr, (K, width))
    elif arr.ndim == 0:
        arr = np.full((K, width) if width else (K,), float(arr))
    arr = np.array(arr, dtype=float)
    expected = (K, width) if width else (K,)
    if arr.shape != expected:
        raise DomainError(f"prior field {name} has shape {arr.shape}, expected {expected}")
    return arr


@dataclass(frozen=True, eq=False)
class PriorConfig:
    """Hyperparameters; scalar or per-pair values broadcast over states.

    Attributes
    ----------
    dirichlet_alpha : concentration of the off-diagonal Dirichlet, one value
        or a ``(K, K)`` matrix whose diagonal is ignored.
    gamma_dwell : (shape, rate) of the Gamma prior on ``lam``.
    gamma_inv_rho : (shape, rate) of the Gamma prior on ``1 / rho``.
    location : (mean, variance) of the normal prior on ``mu`` or ``beta0``.
    harmonic_coef : (mean, variance) of the normal prior on ``beta1``, ``beta2``.
    sigma2 : (shape, scale) of the inverse-gamma prior on ``sigma2``.
    hmm_dirichlet_v : optional ``(K, K)`` full Dirichlet used for geometric states.
    """

    dirichlet_alpha: object = 1.0
    gamma_dwell: object = (0.01, 0.01)
    gamma_inv_rho: object = (2.0, 2.0)
    location: object = (0.0, 100.0)
    harmonic_coef: object = (0.0, 4.0)
    sigma2: object = (2.0, 0.5)
    hmm_dirichlet_v: object = None

    @classmethod
    def weakly_informative(cls):
        return cls()

    def resolve(self, K):
        """Fully broadcast copy with numpy arrays of per-state values."""
        alpha = np.asarray(self.dirichlet_alpha, dtype=float)
        alpha = np.full((K, K), float(alpha)) if alpha.ndim == 0 else np.array(alpha)
        if alpha.shape != (K, K):
            raise DomainError(f"dirichlet_alpha must be a scalar or a {K}x{K} matrix")
        v = self.hmm_dirichlet_v
        if v is not None:
            v = np.array(v, dtype=float)
            if v.shape != (K, K):
                raise DomainError(f"hmm_dirichlet_v must be a {K}x{K} matrix")
        out = ResolvedPrior(
            alpha=alpha,
            gamma_dwell=_per_state(self.gamma_dwell, K, 2, "gamma_dwell"),
            gamma_inv_rho=_per_state(self.gamma_inv_rho, K, 2, "gamma_inv_rho"),
            location=_per_state(self.location, K, 2, "location"),
            harmonic_coef=_per_state(self.harmonic_coef, K, 2, "harmonic_coef"),
            sigma2=_per_state(self.sigma2, K, 2, "sigma2"),
            hmm_v=v)
        out.check()
        return out

    def to_dict(self):
        def plain(x):
            return None if x is None else np.asarray(x, dtype=float).tolist()
        return {name: plain(getattr(self, name)) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: v for k, v in data.items() if v is not None or k == "hmm_dirichlet_v"})


@dataclass(frozen=True, eq=False)
class ResolvedPrior:
    alpha: np.ndarray
    gamma_dwell: np.ndarray
    gamma_inv_rho: np.ndarray
    location: np.ndarray
    harmonic_coef: np.ndarray
    sigma2: np.ndarray
    hmm_v: np.ndarray | None = None

    def check(self):
        K = self.alpha.shape[0]
        off = ~np.eye(K, dtype=bool)
        arrays = [self.alpha[off], self.gamma_dwell, self.gamma_inv_rho, self.location[:, 1],
                  self.harmonic_coef[:, 1], self.sigma2]
        if self.hmm_v is not None:
            arrays.append(self.hmm_v)
        if any(np.any(~(a > 0)) for a in arrays):
            raise DomainError("every prior hyperparameter must be positive")


@functools.lru_cache(maxsize=256)
def prior_for(spec: ModelSpec) -> ResolvedPrior:
    """Resolved prior of ``spec`` (cached; treat the result as read-only)."""
    return (spec.prior or PriorConfig()).resolve(spec.K)


# ---------------------------------------------------------------------------
# Component log densities (value, derivative)

def gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - special.gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def inv_gamma_logpdf(x, shape, scale):
    return shape * np.log(scale) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def dirichlet_logpdf(x, alpha):
    return (special.gammaln(alpha.sum()) - special.gammaln(alpha).sum()
            + np.sum((alpha - 1.0) * np.log(x)))


def log_ordering_normalizer(location_prior):
    """``-log P(mu_1 < ... < mu_K)`` under independent normal priors."""
    mean, var = location_prior[:, 0], location_prior[:, 1]
    K = mean.shape[0]
    if np.all(mean == mean[0]) and np.all(var == var[0]):
        return float(special.gammaln(K + 1))
    if K == 2:
        z = (mean[1] - mean[0]) / math.sqrt(var[0] + var[1])
        return -float(stats.norm.logcdf(z))
    return _mc_ordering_normalizer(tuple(mean), tuple(var))


@functools.lru_cache(maxsize=32)
def _mc_ordering_normalizer(mean, var, n=2 ** 20):
    rng = np.random.default_rng(0)
    draws = rng.normal(mean, np.sqrt(var), size=(n, len(mean)))
    p = np.mean(np.all(np.diff(draws, axis=1) > 0, axis=1))
    return -math.log(max(p, 1.0 / n))


def _in_support(spec, params):
    if np.any(~(params.lam > 0)) or np.any(~(params.sigma2 > 0)):
        return False
    if not np.all(np.isfinite(params.lam)) or not np.all(np.isfinite(params.sigma2)):
        return False
    if spec.has_rho:
        nb = np.array([d is DwellFamily.NEGBINOMIAL for d in spec.dwell])
        if params.rho is None or np.any(~(params.rho[nb] > 0)):
            return False
    pi = params.pi
    if np.any(np.diag(pi) != 0) or np.any(pi < 0) or np.any(np.abs(pi.sum(1) - 1) > 1e-9):
        return False
    if spec.ordered and np.any(np.diff(params.location) <= 0):
        return False
    return True


def log_prior_terms(spec: ModelSpec, params: ParamVector):
    """Named component terms of the log prior (each a float)."""
    pr = prior_for(spec)
    K = spec.K
    terms = {}
    for j in range(K):
        fam = spec.dwell[j]
        others = [k for k in range(K) if k != j]
        use_v = pr.hmm_v is not None and fam is DwellFamily.GEOMETRIC
        if K > 2:
            alpha = pr.hmm_v[j, others] if use_v else pr.alpha[j, others]
            terms[f"pi[{j + 1}]"] = float(dirichlet_logpdf(params.pi[j, others], alpha))
        lam = params.lam[j]
        if use_v:
            v_jj, beta_j = pr.hmm_v[j, j], pr.hmm_v[j, others].sum()
            # g = lam / (1 + lam) ~ Beta(v_jj, beta_j) and dg/dlam = 1 / (1 + lam)^2
            terms[f"lambda[{j + 1}]"] = float(
                (v_jj - 1.0) * (np.log(lam) - np.log1p(lam)) - (beta_j - 1.0) * np.log1p(lam)
                - special.betaln(v_jj, beta_j) - 2.0 * np.log1p(lam))
        else:
            terms[f"lambda[{j + 1}]"] = float(gamma_logpdf(lam, *pr.gamma_dwell[j]))
        if fam is DwellFamily.NEGBINOMIAL:
            rho = params.rho[j]
            terms[f"rho[{j + 1}]"] = float(gamma_logpdf(1.0 / rho, *pr.gamma_inv_rho[j])
                                           - 2.0 * np.log(rho))
        terms[f"location[{j + 1}]"] = float(normal_logpdf(params.location[j], *pr.location[j]))
        if params.harmonic is not None:
            terms[f"harmonic[{j + 1}]"] = float(
                normal_logpdf(params.harmonic[j], *pr.harmonic_coef[j]).sum())
        terms[f"sigma2[{j + 1}]"] = float(inv_gamma_logpdf(params.sigma2[j], *pr.sigma2[j]))
    if spec.ordered:
        terms["ordering"] = log_ordering_normalizer(pr.location)
    return terms


def log_prior(spec: ModelSpec, params: ParamVector) -> float:
    """Log prior density; ``-inf`` outside the support.

    With ordered locations the prior is the product prior restricted to the
    ordered region and renormalized, so it stays a proper density.
    """
    if params.K != spec.K or not _in_support(spec, params):
        return -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        total = sum(log_prior_terms(spec, params).values())
    return float(total) if np.isfinite(total) else -math.inf


def log_prior_and_grad(spec: ModelSpec, params: ParamVector):
    """Log prior and its gradient in constrained coordinates."""
    value = log_prior(spec, params)
    pr = prior_for(spec)
    K = spec.K
    g_pi = np.zeros((K, K))
    g_lam = np.zeros(K)
    g_rho = np.zeros(K)
    loc = params.location
    g_loc = -(loc - pr.location[:, 0]) / pr.location[:, 1]
    g_harm = None
    if params.harmonic is not None:
        g_harm = -(params.harmonic - pr.harmonic_coef[:, :1]) / pr.harmonic_coef[:, 1:]
    s2 = params.sigma2
    g_s2 = -(pr.sigma2[:, 0] + 1.0) / s2 + pr.sigma2[:, 1] / s2 ** 2
    for j in range(K):
        fam = spec.dwell[j]
        others = [k for k in range(K) if k != j]
        use_v = pr.hmm_v is not None and fam is DwellFamily.GEOMETRIC
        if K > 2:
            alpha = pr.hmm_v[j, others] if use_v else pr.alpha[j, others]
            g_pi[j, others] = (alpha - 1.0) / params.pi[j, others]
        lam = params.lam[j]
        if use_v:
            v_jj, beta_j = pr.hmm_v[j, j], pr.hmm_v[j, others].sum()
            g_lam[j] = (v_jj - 1.0) * (1.0 / lam - 1.0 / (1.0 + lam)) - (beta_j + 1.0) / (1.0 + lam)
        else:
            a0, b0 = pr.gamma_dwell[j]
            g_lam[j] = (a0 - 1.0) / lam - b0
        if fam is DwellFamily.NEGBINOMIAL:
            a0, b0 = pr.gamma_inv_rho[j]
            rho = params.rho[j]
            g_rho[j] = -(a0 + 1.0) / rho + b0 / rho ** 2
    return value, ParamGradient(g_pi, g_lam, g_rho, g_loc, g_harm, g_s2)


# ---------------------------------------------------------------------------
# Comparable priors

def hmm_mean_dwell_moments(v_jj, beta_j):
    """Mean and variance of the mean dwell ``1 / (1 - g)`` with ``g ~ Beta(v_jj, beta_j)``."""
    if not v_jj > 0:
        raise DomainError("v_jj must be positive")
    if not beta_j > 1:
        raise DomainError("mean undefined: beta_j must exceed 1")
    if not beta_j > 2:
        raise DomainError("variance undefined: beta_j must exceed 2")
    mean = (v_jj + beta_j - 1.0) / (beta_j - 1.0)
    second = (v_jj + beta_j - 1.0) * (v_jj + beta_j - 2.0) / ((beta_j - 1.0) * (beta_j - 2.0))
    return mean, second - mean ** 2


@dataclass(frozen=True, eq=False)
class ComparablePriors:
    """Dwell hyperparameters giving equal prior moments of the mean dwell.

    ``gamma_dwell`` serves Poisson and negative binomial states,
    ``hmm_dirichlet_v`` geometric states, ``gamma_inv_rho`` the dispersion.
    """

    gamma_dwell: np.ndarray
    hmm_dirichlet_v: np.ndarray
    gamma_inv_rho: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0]))

    def apply(self, base: PriorConfig | None = None) -> PriorConfig:
        base = base or PriorConfig()
        return replace(base, gamma_dwell=self.gamma_dwell, hmm_dirichlet_v=self.hmm_dirichlet_v,
                       gamma_inv_rho=self.gamma_inv_rho)


def calibrate_comparable_priors(target_mean, target_var, split=None, inv_rho=(2.0, 2.0)):
    """Hyperparameters matching the prior mean and variance of the mean dwell.

    For Poisson and negative binomial states the mean dwell is ``1 + lam``
    with ``lam ~ Gamma(a0, b0)``; for geometric states it is ``1 / (1 - g)``
    with ``g ~ Beta(v_jj, beta_j)``. Both moment equations have closed-form
    solutions: ``b0 = (m - 1) / V``, ``a0 = (m - 1) b0`` and
    ``beta_j = 2 + m (m - 1) / V``, ``v_jj = (m - 1)(beta_j - 1)``.

    ``split`` is an optional ``(K, K)`` matrix of positive weights whose
    off-diagonal rows share ``beta_j`` among the other states (equal shares
    by default).
    """
    m = np.atleast_1d(np.asarray(target_mean, dtype=float))
    V = np.atleast_1d(np.asarray(target_var, dtype=float))
    m, V = np.broadcast_arrays(m, V)
    K = m.shape[0]
    if np.any(V <= 0):
        raise InfeasiblePriorError("target variances must be positive")
    if np.any(m <= 1):
        raise InfeasiblePriorError(
            "target mean dwell must exceed 1; any positive variance is then admissible")
    b0 = (m - 1.0) / V
    a0 = (m - 1.0) * b0
    beta = 2.0 + m * (m - 1.0) / V
    v_diag = (m - 1.0) * (beta - 1.0)
    weights = np.ones((K, K)) if split is None else np.array(split, dtype=float)
    np.fill_diagonal(weights, 0.0)
    if K < 2 or np.any(weights.sum(axis=1) <= 0):
        raise InfeasiblePriorError("need at least two states and positive split weights")
    v = weights / weights.sum(axis=1, keepdims=True) * beta[:, None]
    v[np.diag_indices(K)] = v_diag
    return ComparablePriors(gamma_dwell=np.column_stack([a0, b0]), hmm_dirichlet_v=v,
                            gamma_inv_rho=np.broadcast_to(np.asarray(inv_rho, float), (K, 2)).copy())

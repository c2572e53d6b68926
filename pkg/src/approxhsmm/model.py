"""Model specification with its parameter container plus the dwell and emission densities.

Dwell times are strictly positive integers. Every family is written as
``d = 1 + X`` for a count variable ``X`` so that the rate parameter
``lam`` is always the mean of ``d - 1``:

* Geometric: ``P(d = r) = (1 - g) g**(r - 1)`` with ``g = lam / (1 + lam)``.
* Poisson: ``X ~ Poisson(lam)``.
* Negative binomial: ``X`` has mean ``lam`` and variance
  ``lam * (1 + lam / rho)``; ``rho = 1`` gives back the geometric law.

All evaluations are done in log space. Survival functions use the
regularized incomplete gamma and beta functions, so tail probabilities
keep full relative accuracy far beyond the point where ``1 - cdf`` would
cancel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np
from scipy import special

from .errors import ConstructionError, DomainError

if TYPE_CHECKING:  # pragma: no cover
    from .priors import PriorConfig

LOG_2PI = float(np.log(2.0 * np.pi))


class DwellFamily(str, enum.Enum):
    GEOMETRIC = "geometric"
    POISSON = "poisson"
    NEGBINOMIAL = "negbinomial"


class EmissionFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    HARMONIC = "harmonic"


InitialPolicy = Union[str, int, Sequence[float]]


@dataclass(frozen=True)
class ModelSpec:
    """Structure of an approximate hidden semi-Markov model.

    Parameters
    ----------
    dwell : sequence of DwellFamily
        Dwell family of each state; its length is the number of states K.
    a : sequence of int
        Number of expanded states used to represent each dwell law.
    emission : EmissionFamily
        Gaussian emissions, or Gaussian emissions with a harmonic mean.
    omega_hat : float, optional
        Frequency in cycles per observation, required for harmonic emissions.
    prior : PriorConfig, optional
        Prior settings; ``None`` selects the weakly informative preset.
    initial : {"stationary"}, int or sequence of float
        Initial distribution. ``"stationary"`` uses the stationary law of the
        expanded chain; an integer starts a fresh dwell in that state; a
        length-K probability vector starts a fresh dwell drawn from it.
    ordered : bool
        Constrain emission locations to be increasing across states.
    """

    dwell: tuple
    a: tuple
    emission: EmissionFamily = EmissionFamily.GAUSSIAN
    omega_hat: float | None = None
    prior: "PriorConfig | None" = None
    initial: InitialPolicy = "stationary"
    ordered: bool = True

    def __post_init__(self):
        dwell = tuple(DwellFamily(d) for d in self.dwell)
        a = tuple(int(v) for v in np.atleast_1d(self.a))
        object.__setattr__(self, "dwell", dwell)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "emission", EmissionFamily(self.emission))
        K = len(dwell)
        if K < 2:
            raise ConstructionError("a model needs at least two states")
        if len(a) != K:
            raise ConstructionError(f"expected {K} thresholds, got {len(a)}")
        if min(a) < 1:
            raise ConstructionError("every threshold a_j must be at least 1")
        if self.emission is EmissionFamily.HARMONIC:
            if self.omega_hat is None or not 0.0 < self.omega_hat < 0.5:
                raise ConstructionError("harmonic emissions need omega_hat in (0, 0.5)")
        elif self.omega_hat is not None:
            raise ConstructionError("omega_hat is only used with harmonic emissions")
        init = self.initial
        if isinstance(init, str):
            if init != "stationary":
                raise ConstructionError(f"unknown initial policy {init!r}")
        elif isinstance(init, (int, np.integer)):
            if not 0 <= int(init) < K:
                raise ConstructionError(f"initial state {init} out of range")
            object.__setattr__(self, "initial", int(init))
        else:
            vec = tuple(float(v) for v in init)
            if len(vec) != K or min(vec) < 0 or abs(sum(vec) - 1.0) > 1e-10:
                raise ConstructionError("initial vector must be a probability vector of length K")
            object.__setattr__(self, "initial", vec)

    @classmethod
    def uniform(cls, K, dwell, a, **kwargs):
        """Spec with the same dwell family and threshold in every state."""
        return cls(dwell=(dwell,) * K, a=(a,) * K if np.isscalar(a) else a, **kwargs)

    @property
    def K(self):
        return len(self.dwell)

    @property
    def n_expanded(self):
        """Total number of expanded states."""
        return int(sum(self.a))

    @property
    def has_rho(self):
        return any(d is DwellFamily.NEGBINOMIAL for d in self.dwell)

    @property
    def harmonic(self):
        return self.emission is EmissionFamily.HARMONIC

    def replace(self, **changes):
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return ModelSpec(**values)


@dataclass(frozen=True)
class GaussianEmission:
    mu: float
    sigma2: float


@dataclass(frozen=True)
class HarmonicEmission:
    beta0: float
    beta1: float
    beta2: float
    sigma2: float


EmissionParams = Union[GaussianEmission, HarmonicEmission]


def _frozen(x):
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Constrained model parameters stored as arrays over states.

    ``location`` holds the Gaussian means or the harmonic intercepts and
    ``harmonic`` the cosine and sine coefficients (``None`` for plain
    Gaussian emissions). ``rho`` is NaN for states without a negative
    binomial dwell and ``None`` when no state has one.
    """

    pi: np.ndarray
    lam: np.ndarray
    location: np.ndarray
    sigma2: np.ndarray
    rho: np.ndarray | None = None
    harmonic: np.ndarray | None = None

    def __post_init__(self):
        K = np.size(self.lam)
        pi = np.array([[0.0, 1.0], [1.0, 0.0]]) if self.pi is None and K == 2 else self.pi
        object.__setattr__(self, "pi", _frozen(pi))
        object.__setattr__(self, "lam", _frozen(np.atleast_1d(self.lam)))
        object.__setattr__(self, "location", _frozen(np.atleast_1d(self.location)))
        object.__setattr__(self, "sigma2", _frozen(np.atleast_1d(self.sigma2)))
        if self.rho is not None:
            object.__setattr__(self, "rho", _frozen(np.atleast_1d(self.rho)))
        if self.harmonic is not None:
            object.__setattr__(self, "harmonic", _frozen(np.reshape(self.harmonic, (K, 2))))
        if self.pi.shape != (K, K) or self.location.shape != (K,) or self.sigma2.shape != (K,):
            raise ConstructionError("parameter arrays have inconsistent dimensions")
        if self.rho is not None and self.rho.shape != (K,):
            raise ConstructionError("rho must have one entry per state")

    @classmethod
    def gaussian(cls, pi, lam, mu, sigma2, rho=None):
        return cls(pi=pi, lam=lam, location=mu, sigma2=sigma2, rho=rho)

    @classmethod
    def harmonic_gaussian(cls, pi, lam, beta, sigma2, rho=None):
        """``beta`` has one row ``(beta0, beta1, beta2)`` per state."""
        beta = np.asarray(beta, dtype=float)
        return cls(pi=pi, lam=lam, location=beta[:, 0], sigma2=sigma2, rho=rho,
                   harmonic=beta[:, 1:3])

    @property
    def K(self):
        return self.lam.shape[0]

    @property
    def mu(self):
        return self.location

    def emission(self, j):
        if self.harmonic is None:
            return GaussianEmission(float(self.location[j]), float(self.sigma2[j]))
        b1, b2 = self.harmonic[j]
        return HarmonicEmission(float(self.location[j]), float(b1), float(b2),
                                float(self.sigma2[j]))

    def rho_of(self, j):
        return None if self.rho is None else float(self.rho[j])

    def permute(self, order):
        """Relabel states so that new state ``i`` is old state ``order[i]``."""
        order = np.asarray(order)
        return ParamVector(
            pi=self.pi[np.ix_(order, order)], lam=self.lam[order],
            location=self.location[order], sigma2=self.sigma2[order],
            rho=None if self.rho is None else self.rho[order],
            harmonic=None if self.harmonic is None else self.harmonic[order])

    def validate(self, spec: ModelSpec):
        """Raise DomainError unless the parameters are valid for ``spec``."""
        K = spec.K
        if self.K != K:
            raise ConstructionError(f"parameters have {self.K} states, spec has {K}")
        pi = self.pi
        if np.any(np.diag(pi) != 0.0):
            raise DomainError("self-transitions pi[j, j] must be exactly zero")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("each row of pi must be a probability vector")
        if np.any(~(self.lam > 0)) or np.any(~np.isfinite(self.lam)):
            raise DomainError("dwell rates lambda must be positive and finite")
        if np.any(~(self.sigma2 > 0)) or np.any(~np.isfinite(self.sigma2)):
            raise DomainError("emission variances must be positive and finite")
        for j, fam in enumerate(spec.dwell):
            if fam is DwellFamily.NEGBINOMIAL:
                if self.rho is None or not (self.rho[j] > 0 and np.isfinite(self.rho[j])):
                    raise DomainError(f"state {j} needs a positive dispersion rho")
        if spec.harmonic != (self.harmonic is not None):
            raise ConstructionError("emission parameters do not match the emission family")
        return self


@dataclass(frozen=True, eq=False)
class TimeSeries:
    y: np.ndarray
    name: str = field(default="y")

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        if y.size < 1:
            raise DomainError("a time series needs at least one observation")
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise DomainError(f"non-finite observations at t = {(bad + 1).tolist()[:10]}")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def T(self):
        return self.y.shape[0]

    def __len__(self):
        return self.T


def as_array(y):
    """Observation vector from a TimeSeries or an array-like."""
    if isinstance(y, TimeSeries):
        return y.y
    return TimeSeries(y).y


# ---------------------------------------------------------------------------
# Dwell distributions

def _check_dwell_args(family, lam, rho):
    family = DwellFamily(family)
    if not np.all(np.asarray(lam) > 0) or not np.all(np.isfinite(lam)):
        raise DomainError(f"dwell rate must be positive and finite, got {lam}")
    if family is DwellFamily.NEGBINOMIAL:
        if rho is None or not np.all(np.asarray(rho) > 0) or not np.all(np.isfinite(rho)):
            raise DomainError(f"negative binomial dwell needs a positive rho, got {rho}")
    elif rho is not None:
        raise DomainError(f"rho is only defined for negative binomial dwells ({family.value})")
    return family


def _check_r(r):
    r = np.asarray(r)
    if not np.issubdtype(r.dtype, np.integer):
        if np.any(r != np.round(r)):
            raise DomainError("dwell lengths must be integers")
        r = r.astype(np.int64)
    if np.any(r < 1):
        raise DomainError("dwell lengths must be at least 1")
    return r


def dwell_logpmf_array(family, lam, rho, r):
    """Vectorized ``log P(d = r)`` without argument checking."""
    k = np.asarray(r, dtype=float) - 1.0
    if family is DwellFamily.GEOMETRIC:
        return k * (np.log(lam) - np.log1p(lam)) - np.log1p(lam)
    if family is DwellFamily.POISSON:
        return special.xlogy(k, lam) - lam - special.gammaln(k + 1.0)
    log_p = np.log(rho) - np.log(rho + lam)
    log_q = np.log(lam) - np.log(rho + lam)
    return (special.gammaln(k + rho) - special.gammaln(rho) - special.gammaln(k + 1.0)
            + rho * log_p + k * log_q)


def dwell_logsurvival_array(family, lam, rho, r):
    """Vectorized ``log P(d >= r)`` without argument checking."""
    k = np.asarray(r, dtype=float) - 1.0
    with np.errstate(divide="ignore"):
        if family is DwellFamily.GEOMETRIC:
            return k * (np.log(lam) - np.log1p(lam))
        kk = np.maximum(k, 1.0)
        if family is DwellFamily.POISSON:
            surv = special.gammainc(kk, lam)
        else:
            surv = special.betainc(kk, rho, lam / (rho + lam))
        return np.where(k > 0, np.log(surv), 0.0)


def dwell_pmf(family, lam, rho=None, r=1):
    """Probability ``P(d = r)`` of a dwell of exactly ``r`` steps."""
    family = _check_dwell_args(family, lam, rho)
    r = _check_r(r)
    out = np.exp(dwell_logpmf_array(family, lam, rho, r))
    return float(out) if out.ndim == 0 else out


def dwell_survival(family, lam, rho=None, r=1):
    """Probability ``P(d >= r)`` that a dwell lasts at least ``r`` steps."""
    family = _check_dwell_args(family, lam, rho)
    r = _check_r(r)
    out = np.exp(dwell_logsurvival_array(family, lam, rho, r))
    return float(out) if out.ndim == 0 else out


def dwell_mean_var(family, lam, rho=None):
    """Mean and variance of the dwell ``d`` (not of ``d - 1``)."""
    family = _check_dwell_args(family, lam, rho)
    if family is DwellFamily.GEOMETRIC:
        return lam + 1.0, lam * (1.0 + lam)
    if family is DwellFamily.POISSON:
        return lam + 1.0, lam
    return lam + 1.0, lam * (1.0 + lam / rho)


def dwell_quantile_support(family, lam, rho=None, tol=1e-12, cap=10**7):
    """Smallest ``D`` with ``P(d > D) < tol``."""
    family = _check_dwell_args(family, lam, rho)
    mean, var = dwell_mean_var(family, lam, rho)
    D = max(int(mean + 10.0 * np.sqrt(var)) + 2, 4)
    log_tol = np.log(tol)
    while dwell_logsurvival_array(family, lam, rho, D + 1) >= log_tol:
        if D >= cap:
            raise DomainError("dwell distribution too heavy-tailed to truncate")
        D *= 2
    lo, hi = 1, D
    while lo < hi:
        mid = (lo + hi) // 2
        if dwell_logsurvival_array(family, lam, rho, mid + 1) < log_tol:
            hi = mid
        else:
            lo = mid + 1
    return lo


# ---------------------------------------------------------------------------
# Emissions

def harmonic_design(T, omega_hat, start=1):
    """Rows ``(cos(2 pi w t), sin(2 pi w t))`` for ``t = start .. start + T - 1``."""
    t = np.arange(start, start + T, dtype=float)
    arg = 2.0 * np.pi * omega_hat * t
    return np.column_stack([np.cos(arg), np.sin(arg)])


def emission_means(params: ParamVector, T, omega_hat=None, start=1):
    """Emission means with shape ``(T, K)``."""
    if params.harmonic is None:
        return np.broadcast_to(params.location, (T, params.K))
    X = harmonic_design(T, omega_hat, start)
    return params.location[None, :] + X @ params.harmonic.T


def emission_logdensity_matrix(params: ParamVector, y, omega_hat=None, start=1):
    """``log p(y_t | state j)`` with shape ``(T, K)``."""
    y = np.asarray(y, dtype=float)
    means = emission_means(params, y.shape[0], omega_hat, start)
    s2 = params.sigma2[None, :]
    return -0.5 * (LOG_2PI + np.log(s2) + (y[:, None] - means) ** 2 / s2)


def emission_logdensity(params: EmissionParams, y, t=1, omega_hat=None):
    """Log density of one observation under one state's emission law."""
    if not params.sigma2 > 0:
        raise DomainError(f"emission variance must be positive, got {params.sigma2}")
    if isinstance(params, HarmonicEmission):
        if omega_hat is None:
            raise DomainError("harmonic emissions need omega_hat")
        arg = 2.0 * np.pi * omega_hat * t
        mean = params.beta0 + params.beta1 * np.cos(arg) + params.beta2 * np.sin(arg)
    else:
        mean = params.mu
    return -0.5 * (LOG_2PI + np.log(params.sigma2) + (y - mean) ** 2 / params.sigma2)

"""Forward-algorithm likelihood of the approximate model and its gradient.

The forward messages are normalized to sum to one at every step, so they
are the filtered distributions over expanded states. The gradient is the
reverse (adjoint) sweep of the same recursion and needs every stored
message, so it costs ``O(T * A)`` memory for ``A`` expanded states.

Two independent references are provided for testing: enumeration of every
expanded-state path, and the exact semi-Markov recursion that works on
dwell segments directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from . import _kernels
from .embedding import (PhiStructure, hazard_tables, phi_structure, phi_values,
                        stationary_factor)
from .errors import DomainError, LikelihoodError, SizeGuardError
from .model import (DwellFamily, ModelSpec, ParamVector, as_array, dwell_logpmf_array,
                    dwell_logsurvival_array, dwell_quantile_support,
                    emission_logdensity_matrix, harmonic_design)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    log_likelihood: float
    log_scale: np.ndarray
    alpha_T: np.ndarray


@dataclass(frozen=True, eq=False)
class ParamGradient:
    """Partial derivatives of a log density in constrained coordinates."""

    pi: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    location: np.ndarray
    harmonic: np.ndarray | None
    sigma2: np.ndarray


def _dense(structure: PhiStructure, values):
    out = np.zeros((structure.dim, structure.dim))
    out[structure.row, structure.col_idx] = values
    return out


def initial_vector(spec: ModelSpec, structure: PhiStructure, values):
    """Initial expanded-state distribution and, if stationary, its LU factor."""
    A = structure.dim
    if spec.initial == "stationary":
        return stationary_factor(_dense(structure, values))
    pi0 = np.zeros(A)
    if isinstance(spec.initial, int):
        pi0[structure.offsets[spec.initial]] = 1.0
    else:
        pi0[structure.offsets] = spec.initial
    return pi0, None


class LikelihoodEngine:
    """Reusable evaluator bound to one model structure and one data series."""

    def __init__(self, spec: ModelSpec, y):
        self.spec = spec
        self.y = as_array(y)
        self.T = self.y.shape[0]
        self.structure = phi_structure(spec.a)
        self.X = harmonic_design(self.T, spec.omega_hat) if spec.harmonic else None

    def log_emissions(self, params: ParamVector, check=True):
        log_e = emission_logdensity_matrix(params, self.y, self.spec.omega_hat)
        if check:
            bad = ~np.isfinite(log_e)
            if bad.any():
                t, j = np.argwhere(bad)[0]
                raise LikelihoodError(
                    f"non-finite emission density at t={t + 1}, state={j + 1}", t + 1, j + 1)
        return log_e

    def _run_forward(self, log_e, pi0, values, store, backend="sparse", use_max=False):
        T, A = self.T, self.structure.dim
        alphas = np.empty((T if store else 1, A))
        log_scale, shift, norm = np.empty(T), np.empty(T), np.empty(T)
        s = self.structure
        if backend == "sparse":
            padded = np.append(values, 0.0)  # index -1 reads the zero
            status, total = _kernels.forward_sparse(
                log_e, s.owner, pi0, padded[s.band_sub], padded[s.band_diag], s.irr_cols,
                s.irr_ptr, s.irr_row, values[s.irr_perm], use_max, store, alphas,
                log_scale, shift, norm)
        elif backend == "dense":
            status, total = _kernels.forward_dense(
                log_e, s.owner, pi0, _dense(s, values), use_max, store, alphas,
                log_scale, shift, norm)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        return status, total, alphas, log_scale, shift, norm

    def forward(self, params: ParamVector, backend="sparse", scaling="sum"):
        params.validate(self.spec)
        log_e = self.log_emissions(params)
        values = phi_values(self.structure, params.pi, hazard_tables(self.spec, params).h)
        pi0, _ = initial_vector(self.spec, self.structure, values)
        status, total, alphas, log_scale, _, _ = self._run_forward(
            log_e, pi0, values, False, backend, scaling == "max")
        alpha_T = alphas[-1].copy()
        if status:
            return ForwardResult(-np.inf, log_scale, alpha_T)
        if scaling == "max":
            alpha_T /= alpha_T.sum()
        return ForwardResult(float(total), log_scale, alpha_T)

    def value_and_grad(self, params: ParamVector):
        """Log-likelihood and its constrained-coordinate gradient.

        Returns ``(-inf, None)`` when the forward pass underflows.
        """
        spec, s = self.spec, self.structure
        log_e = self.log_emissions(params)
        ht = hazard_tables(spec, params, with_grad=True)
        values = phi_values(s, params.pi, ht.h)
        pi0, lu = initial_vector(spec, s, values)
        status, total, alphas, _, shift, norm = self._run_forward(log_e, pi0, values, True)
        if status:
            return -np.inf, None
        g_vals = np.zeros(s.nnz)
        g_pi0 = np.zeros(s.dim)
        occ = np.zeros((self.T, spec.K))
        _kernels.backward_sparse(log_e, s.owner, shift, norm, alphas, s.row_ptr, s.col_idx,
                                 values, g_vals, g_pi0, occ)
        if lu is not None:
            # pi0 = 1^T M^{-1} with M = I - Phi + U, so d logL = pi0 dPhi M^{-1} g.
            w = scipy.linalg.lu_solve(lu, g_pi0, trans=1, check_finite=False)
            g_vals += pi0[s.row] * w[s.col_idx]
        return float(total), self._pull_back(params, ht, g_vals, occ)

    def _pull_back(self, params, ht, g_vals, occ):
        spec, s = self.spec, self.structure
        K = spec.K
        pi = params.pi
        hr = ht.h[s.row]
        exit_w = pi[s.src, s.dst]
        g_h = np.bincount(s.row, weights=np.where(s.is_exit, exit_w * g_vals, -g_vals),
                          minlength=s.dim)
        g_pi = np.bincount(s.src * K + s.dst, weights=np.where(s.is_exit, hr * g_vals, 0.0),
                           minlength=K * K).reshape(K, K)
        g_lam = np.bincount(s.owner, weights=g_h * ht.dh_dlam, minlength=K)
        g_rho = np.bincount(s.owner, weights=g_h * ht.dh_drho, minlength=K)
        means = (params.location[None, :] if self.X is None
                 else params.location[None, :] + self.X @ params.harmonic.T)
        resid = self.y[:, None] - means
        s2 = params.sigma2
        score_m = occ * resid / s2
        g_loc = score_m.sum(axis=0)
        g_harm = None if self.X is None else score_m.T @ self.X
        g_s2 = (occ * (0.5 * resid ** 2 / s2 ** 2 - 0.5 / s2)).sum(axis=0)
        return ParamGradient(g_pi, g_lam, g_rho, g_loc, g_harm, g_s2)

    def smoothed(self, params: ParamVector):
        """Filtered and smoothed expanded-state probabilities ``(alphas, betas, norm)``."""
        spec, s = self.spec, self.structure
        log_e = self.log_emissions(params)
        values = phi_values(s, params.pi, hazard_tables(spec, params).h)
        pi0, _ = initial_vector(spec, s, values)
        status, total, alphas, _, shift, norm = self._run_forward(log_e, pi0, values, True)
        if status:
            raise LikelihoodError(f"forward pass underflowed at t={status}", status)
        betas = np.empty_like(alphas)
        _kernels.backward_messages(log_e, s.owner, shift, norm, s.row_ptr, s.col_idx,
                                   values, betas)
        return alphas, betas, norm, log_e, values, pi0


def log_likelihood(spec: ModelSpec, params: ParamVector, y, backend="sparse",
                   scaling="sum") -> ForwardResult:
    """Log-likelihood of ``y`` under the approximate model.

    ``backend`` selects the compressed-row (``"sparse"``) or dense matrix
    product; ``scaling`` chooses per-step normalization by the sum or by the
    maximum of the forward message. Both choices give the same total.
    """
    return LikelihoodEngine(spec, y).forward(params, backend, scaling)


def loglik_value_and_grad(spec: ModelSpec, params: ParamVector, y):
    """Log-likelihood and :class:`ParamGradient` at constrained ``params``."""
    params.validate(spec)
    return LikelihoodEngine(spec, y).value_and_grad(params)


def loglik_gradient(spec: ModelSpec, u, y):
    """Gradient of the log-likelihood with respect to unconstrained coordinates."""
    from .transforms import ParamLayout

    layout = ParamLayout(spec)
    params = layout.constrain(u)
    value, grad = LikelihoodEngine(spec, y).value_and_grad(params)
    if grad is None:
        raise LikelihoodError("likelihood underflow; gradient undefined")
    return layout.pull_back(u, grad)


# ---------------------------------------------------------------------------
# Reference implementations

BRUTE_FORCE_LIMIT = 10 ** 7


def brute_force_loglik(spec: ModelSpec, params: ParamVector, y, chunk=2 ** 18):
    """Log-likelihood by summing over every expanded-state path."""
    y = as_array(y)
    T = y.shape[0]
    s = phi_structure(spec.a)
    A = s.dim
    if float(A) ** T > BRUTE_FORCE_LIMIT:
        raise SizeGuardError(f"{A}^{T} paths exceed the enumeration limit {BRUTE_FORCE_LIMIT}")
    params.validate(spec)
    values = phi_values(s, params.pi, hazard_tables(spec, params).h)
    pi0, _ = initial_vector(spec, s, values)
    with np.errstate(divide="ignore"):
        log_phi = np.log(_dense(s, values))
        log_pi0 = np.log(pi0)
    log_e = emission_logdensity_matrix(params, y, spec.omega_hat)[:, s.owner]
    n = A ** T
    powers = A ** np.arange(T - 1, -1, -1, dtype=np.int64)
    parts = []
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n), dtype=np.int64)
        paths = (idx[:, None] // powers[None, :]) % A
        lp = log_pi0[paths[:, 0]] + log_e[0, paths[:, 0]]
        for t in range(1, T):
            lp = lp + log_phi[paths[:, t - 1], paths[:, t]] + log_e[t, paths[:, t]]
        parts.append(logsumexp(lp))
    return float(logsumexp(parts))


def _dwell_tables(spec, params, D):
    log_pmf = np.empty((spec.K, D))
    log_surv = np.empty((spec.K, D))
    d = np.arange(1, D + 1)
    for j, fam in enumerate(spec.dwell):
        rho = params.rho_of(j) if fam is DwellFamily.NEGBINOMIAL else None
        log_pmf[j] = dwell_logpmf_array(fam, params.lam[j], rho, d)
        log_surv[j] = dwell_logsurvival_array(fam, params.lam[j], rho, d)
    return log_pmf, log_surv


def segment_stationary(pi):
    """Stationary law of the between-state (jump) chain."""
    K = pi.shape[0]
    x, _ = stationary_factor(np.asarray(pi, dtype=float))
    return x.reshape(K)


def exact_initial(spec: ModelSpec, params: ParamVector, D, initial=None):
    """Log initial weights over (state, position within the current dwell).

    ``initial=None`` follows ``spec.initial``. For ``"stationary"`` the first
    observation falls inside a dwell drawn from the equilibrium of the
    semi-Markov process: state ``j`` at position ``r`` with probability
    proportional to ``psi_j P(d_j >= r)``, ``psi`` being the stationary law of
    the between-state chain. A length-K vector starts a fresh dwell.
    """
    K = spec.K
    if initial is None:
        initial = spec.initial
    if isinstance(initial, str) and initial == "stationary":
        psi = segment_stationary(params.pi)
        _, log_surv = _dwell_tables(spec, params, D)
        with np.errstate(divide="ignore"):
            w = np.log(psi)[:, None] + log_surv
        return w - logsumexp(w)
    vec = np.zeros(K)
    if isinstance(initial, (int, np.integer)):
        vec[int(initial)] = 1.0
    else:
        vec[:] = initial
    with np.errstate(divide="ignore"):
        return np.log(vec)[:, None]


def exact_support(spec: ModelSpec, params: ParamVector, tol=1e-12):
    """Largest per-state dwell ``D`` with tail mass above ``tol``."""
    out = []
    for j, fam in enumerate(spec.dwell):
        rho = params.rho_of(j) if fam is DwellFamily.NEGBINOMIAL else None
        out.append(dwell_quantile_support(fam, float(params.lam[j]), rho, tol))
    return max(out)


def exact_hsmm_loglik(spec: ModelSpec, params: ParamVector, y, initial=None,
                      max_dwell=None, tol=1e-12):
    """Log-likelihood of the exact hidden semi-Markov model.

    The thresholds ``spec.a`` are ignored. Dwells are truncated at the
    smallest ``D`` with ``P(d > D) < tol`` unless ``max_dwell`` is given;
    ``max_dwell="full"`` also keeps every dwell length up to ``T``, which
    makes the recursion quadratic in ``T``.
    """
    y = as_array(y)
    T = y.shape[0]
    params.validate(spec.replace(a=(1,) * spec.K))
    if max_dwell == "full":
        D = max(T, exact_support(spec, params, tol))
    else:
        D = int(max_dwell) if max_dwell is not None else exact_support(spec, params, tol)
        if D > 10 * T:
            warnings.warn(f"dwell support {D} exceeds ten times the series length {T}",
                          RuntimeWarning, stacklevel=2)
    if D < 1:
        raise DomainError("max_dwell must be positive")
    log_pmf, log_surv = _dwell_tables(spec, params, D)
    log_init = exact_initial(spec, params, D, initial)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    log_e = emission_logdensity_matrix(params, y, spec.omega_hat)
    return float(_kernels.exact_hsmm(log_e, log_pmf, log_surv, log_pi,
                                     np.ascontiguousarray(log_init)))

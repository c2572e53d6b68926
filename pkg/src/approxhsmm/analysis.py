"""Decoding, forecasting, residual checks and the dwell-threshold diagnostic."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy import special, stats

from . import _kernels
from .embedding import hazard_tables, phi_values
from .errors import HSMMError, SamplingError
from .inference import PosteriorDraws, maximize_likelihood, sample_posterior
from .likelihood import LikelihoodEngine, initial_vector
from .model import (DwellFamily, ModelSpec, ParamVector, as_array, dwell_logsurvival_array,
                    emission_means)
from .simulate import run_length_segments, simulate_embedded, simulate_hsmm


def _chain_parts(engine: LikelihoodEngine, params: ParamVector):
    s = engine.structure
    values = phi_values(s, params.pi, hazard_tables(engine.spec, params).h)
    pi0, _ = initial_vector(engine.spec, s, values)
    return s, values, pi0


# ---------------------------------------------------------------------------
# Viterbi decoding

@dataclass(frozen=True, eq=False)
class StatePath:
    """Most probable expanded-state path and its collapse onto model states.

    Indices are zero-based; CSV output is one-based.
    """

    aggregate_path: np.ndarray
    state_path: np.ndarray
    log_score: float

    def segments(self):
        return run_length_segments(self.state_path)

    def to_csv(self, path):
        T = self.state_path.shape[0]
        data = np.column_stack([np.arange(1, T + 1), self.state_path + 1,
                                self.aggregate_path + 1])
        np.savetxt(path, data, delimiter=",", header="t,state,expanded_state", comments="",
                   fmt="%d")


def viterbi(spec: ModelSpec, params: ParamVector, y) -> StatePath:
    """Max-product decoding over the expanded states (ties to the lowest index)."""
    params.validate(spec)
    engine = LikelihoodEngine(spec, y)
    s, values, pi0 = _chain_parts(engine, params)
    log_e = engine.log_emissions(params)
    with np.errstate(divide="ignore"):
        path, score = _kernels.viterbi_sparse(log_e, s.owner, np.log(pi0), s.row_ptr,
                                              s.col_idx, np.log(values))
    return StatePath(path, s.owner[path], float(score))


# ---------------------------------------------------------------------------
# Forecasting

@dataclass(frozen=True, eq=False)
class ForecastDensity:
    """Predictive densities of the next ``horizon`` observations.

    ``weights[h - 1]`` are the predictive state probabilities for step
    ``h``; each density is the matching Gaussian mixture. ``log_pred``
    holds the log predictive density at the realized test values when they
    were supplied.
    """

    horizon: int
    weights: np.ndarray
    means: np.ndarray
    sigma2: np.ndarray
    xi: np.ndarray
    log_pred: np.ndarray | None = None

    def logpdf(self, h, y):
        """Log predictive density of step ``h`` (1-based) at values ``y``."""
        y = np.asarray(y, dtype=float)
        w, m = self.weights[h - 1], self.means[h - 1]
        comp = stats.norm.logpdf(y[..., None], m, np.sqrt(self.sigma2))
        with np.errstate(divide="ignore"):
            return special.logsumexp(comp + np.log(w), axis=-1)

    def pdf(self, h, y):
        return np.exp(self.logpdf(h, y))


def filtered_terminal(spec: ModelSpec, params: ParamVector, y_train):
    """Filtered expanded-state distribution after the training series."""
    res = LikelihoodEngine(spec, y_train).forward(params)
    if not np.isfinite(res.log_likelihood):
        raise HSMMError("forward pass underflowed on the training series")
    return res.alpha_T


def forecast_density(spec: ModelSpec, params: ParamVector, y_train, horizon, y_test=None,
                     mode="static") -> ForecastDensity:
    """h-step predictive densities ``xi' Phi^h P(y) 1`` for ``h = 1..horizon``.

    ``mode="static"`` keeps the filter at the end of the training data.
    ``mode="rolling"`` conditions each step on the realized test values
    before it (one-step-ahead densities), which needs ``y_test``.
    """
    params.validate(spec)
    y_train = as_array(y_train)
    T = y_train.shape[0]
    H = int(horizon)
    engine = LikelihoodEngine(spec, y_train)
    s, values, _ = _chain_parts(engine, params)
    xi = filtered_terminal(spec, params, y_train)
    means = emission_means(params, T + H, spec.omega_hat)[T:]
    if mode == "static":
        weights = _kernels.propagate_marginals(xi, s.row_ptr, s.col_idx, values, s.owner,
                                               spec.K, H)
    elif mode == "rolling":
        if y_test is None:
            raise ValueError("rolling forecasts need the test values")
        full = np.concatenate([y_train, as_array(y_test)[:H]])
        alphas = LikelihoodEngine(spec, full).smoothed(params)[0]
        phi = scipy.sparse.csr_matrix((values, s.col_idx, s.row_ptr), shape=(s.dim, s.dim))
        pred = np.asarray(alphas[T - 1:T + H - 1] @ phi)
        weights = np.stack([np.bincount(s.owner, weights=row, minlength=spec.K)
                            for row in pred])
    else:
        raise ValueError(f"unknown forecast mode {mode!r}")
    fd = ForecastDensity(H, weights, means, params.sigma2.copy(), xi)
    if y_test is not None:
        y_test = as_array(y_test)[:H]
        log_pred = np.array([fd.logpdf(h + 1, y_test[h]) for h in range(H)])
        fd = ForecastDensity(H, weights, means, params.sigma2.copy(), xi, log_pred)
    return fd


def _score(log_pred):
    if np.any(~np.isfinite(log_pred)):
        warnings.warn("zero predictive density; the log-score is infinite", RuntimeWarning,
                      stacklevel=3)
        return math.inf
    return float(-np.sum(log_pred))


def forecast_logscore_frequentist(spec: ModelSpec, params_hat: ParamVector, y_train, y_test,
                                  mode="static"):
    """``sum_h -log p(y_test[h] | params_hat)`` with a plug-in parameter."""
    y_test = as_array(y_test)
    fd = forecast_density(spec, params_hat, y_train, y_test.shape[0], y_test, mode)
    return _score(fd.log_pred)


def forecast_log_predictive_draws(spec: ModelSpec, draws, y_train, y_test, mode="static"):
    """``(M, H)`` log predictive densities of the test values, one row per draw."""
    y_test = as_array(y_test)
    return np.stack([forecast_density(spec, p, y_train, y_test.shape[0], y_test, mode).log_pred
                     for p in draws])


def forecast_logscore_bayes(spec: ModelSpec, draws, y_train, y_test, mode="static"):
    """``sum_h -log((1/M) sum_m p(y_test[h] | draw m))`` over posterior draws.

    ``draws`` is a :class:`PosteriorDraws` or any sequence of parameters.
    """
    lp = forecast_log_predictive_draws(spec, draws, y_train, y_test, mode)
    mixed = special.logsumexp(lp, axis=0) - math.log(lp.shape[0])
    return _score(mixed)


# ---------------------------------------------------------------------------
# Pseudo-residuals

CDF_CLAMP = 1e-12


def pseudo_residuals(spec: ModelSpec, params: ParamVector, y):
    """Normal pseudo-residuals ``Phi^-1(P(Y_t <= y_t | all other observations))``.

    The leave-one-out state weights at ``t`` combine the one-step
    prediction from the forward message at ``t - 1`` with the backward
    message at ``t``, which excludes the emission at ``t`` itself.
    """
    params.validate(spec)
    y = as_array(y)
    engine = LikelihoodEngine(spec, y)
    alphas, betas, _, _, values, pi0 = engine.smoothed(params)
    s = engine.structure
    phi = scipy.sparse.csr_matrix((values, s.col_idx, s.row_ptr), shape=(s.dim, s.dim))
    pred = np.empty_like(alphas)
    pred[0] = pi0
    pred[1:] = np.asarray(alphas[:-1] @ phi)
    joint = pred * betas
    agg = scipy.sparse.csr_matrix((np.ones(s.dim), (np.arange(s.dim), s.owner)),
                                  shape=(s.dim, spec.K))
    w = np.asarray(joint @ agg)
    w /= w.sum(axis=1, keepdims=True)
    means = emission_means(params, y.shape[0], spec.omega_hat)
    cdf = np.sum(w * stats.norm.cdf((y[:, None] - means) / np.sqrt(params.sigma2)), axis=1)
    return stats.norm.ppf(np.clip(cdf, CDF_CLAMP, 1.0 - CDF_CLAMP))


# ---------------------------------------------------------------------------
# Posterior predictive simulation

def posterior_predictive_simulate(spec: ModelSpec, draws, T, n_rep, seed=None):
    """``(n_rep, T)`` replicated series, each from a uniformly chosen draw.

    Every replicate uses its own random stream spawned from ``seed``.
    """
    out = np.empty((n_rep, T))
    if n_rep == 0:
        return out
    draws_list = draws if isinstance(draws, PosteriorDraws) else list(draws)
    M = len(draws_list)
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(n_rep)):
        rng = np.random.default_rng(child)
        m = int(rng.integers(M))
        out[r] = simulate_embedded(spec, draws_list[m], T, seed=rng).y.y
    return out


# ---------------------------------------------------------------------------
# Dwell-threshold diagnostic

@dataclass(frozen=True)
class DwellDiagnosticConfig:
    """Settings of :func:`dwell_threshold_diagnostic`.

    ``fit="bayes"`` uses posterior means and credible intervals;
    ``fit="mle"`` uses maximum likelihood and only the relative tolerance.
    """

    fit: str = "bayes"
    n_chains: int = 2
    n_warmup: int = 500
    n_draws: int = 500
    n_restarts: int = 5
    seed: int | None = None
    rel_tol: float = 0.10
    ci_level: float = 0.90
    decrease_prob: float = 0.999
    T_gen: int | None = None


@dataclass(frozen=True)
class StateDwellCheck:
    state: int
    a: int
    lam_obs: float
    lam_obs_ci: tuple | None
    lam_gen: float
    abs_diff: float
    rel_diff: float
    passed: bool
    prob_within_threshold: float
    recommendation: str


@dataclass(eq=False)
class DwellDiagnosticReport:
    states: list
    params_obs: ParamVector
    params_gen: ParamVector
    extra: dict = field(default_factory=dict)

    @property
    def all_passed(self):
        return all(s.passed for s in self.states)

    def to_dict(self):
        return {"all_passed": self.all_passed,
                "states": [{k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in vars(s).items()} for s in self.states]}


def _fit_stage(spec, y, config, seed, stage, start=None):
    try:
        if config.fit == "mle":
            res = maximize_likelihood(spec, y, config.n_restarts, seed=seed, start=start)
            lam = res.params.lam[None, :]
            return res.params, lam, None
        draws, _ = sample_posterior(spec, y, config.n_chains, config.n_warmup, config.n_draws,
                                    seed=seed, warn=False)
    except HSMMError as exc:
        raise SamplingError(f"dwell diagnostic stage '{stage}' failed: {exc}") from exc
    lam = np.stack([p.lam for p in draws])
    return draws.mean(), lam, draws


def _prob_within(spec, draws_params, j):
    fam, a = spec.dwell[j], spec.a[j]
    vals = []
    for p in draws_params:
        rho = p.rho_of(j) if fam is DwellFamily.NEGBINOMIAL else None
        vals.append(-math.expm1(float(dwell_logsurvival_array(fam, p.lam[j], rho, a + 1))))
    return float(np.mean(vals))


def dwell_threshold_diagnostic(spec: ModelSpec, y, config: DwellDiagnosticConfig | None = None
                               ) -> DwellDiagnosticReport:
    """Check whether the thresholds ``spec.a`` are large enough.

    1. fit the approximate model to ``y``;
    2. simulate a series of the same length from the exact semi-Markov model
       at the fitted parameters;
    3. refit the approximate model, same thresholds, to the synthetic series;
    4. compare the dwell rates of the two fits state by state.

    A state passes when the refit rate is within ``rel_tol`` of the first
    fit or inside its ``ci_level`` credible interval. Failing states should
    get a larger threshold; passing states whose dwell lies below the
    threshold with posterior probability above ``decrease_prob`` may use a
    smaller one.
    """
    config = config or DwellDiagnosticConfig()
    y = as_array(y)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    params_obs, lam_obs_draws, draws = _fit_stage(spec, y, config, seeds[0], "fit observed")
    T_gen = config.T_gen or y.shape[0]
    try:
        synthetic = simulate_hsmm(spec, params_obs, T_gen, seed=seeds[1]).y.y
    except HSMMError as exc:
        raise SamplingError(f"dwell diagnostic stage 'simulate' failed: {exc}") from exc
    # the synthetic series was generated at params_obs, so the refit starts there
    params_gen, _, _ = _fit_stage(spec, synthetic, config, seeds[2], "refit synthetic",
                                  start=params_obs)
    checks = []
    for j in range(spec.K):
        lam_obs = float(params_obs.lam[j])
        lam_gen = float(params_gen.lam[j])
        diff = abs(lam_gen - lam_obs)
        rel = diff / lam_obs
        ci = None
        if draws is not None:
            q = (1.0 - config.ci_level) / 2.0
            ci = tuple(float(v) for v in np.quantile(lam_obs_draws[:, j], [q, 1.0 - q]))
        passed = rel <= config.rel_tol or (ci is not None and ci[0] <= lam_gen <= ci[1])
        prob = _prob_within(spec, draws if draws is not None else [params_obs], j)
        if not passed:
            advice = "increase"
        elif prob > config.decrease_prob:
            advice = "may decrease"
        else:
            advice = "keep"
        checks.append(StateDwellCheck(j, spec.a[j], lam_obs, ci, lam_gen, diff, rel, passed,
                                      prob, advice))
    return DwellDiagnosticReport(checks, params_obs, params_gen)

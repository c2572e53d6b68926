"""Posterior sampling and maximum likelihood for the approximate model.

The sampler works on the unconstrained coordinates of
:class:`~approxhsmm.transforms.ParamLayout`, so the target density is the
likelihood times the prior times the Jacobian of the constraining map.
Ordered emission locations are part of that map, which removes label
switching from every draw.
"""

from __future__ import annotations

import concurrent.futures
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .diagnostics import effective_sample_size, split_rhat
from .embedding import phi_values, hazard_tables
from .errors import HSMMError, OptimizationError, SamplingError
from .likelihood import LikelihoodEngine, initial_vector
from .model import DwellFamily, ModelSpec, ParamVector, as_array, harmonic_design
from .nuts import nuts_sample
from .priors import log_prior, log_prior_and_grad
from .transforms import ParamLayout

_NUMERIC_FAILURES = (HSMMError, ValueError, FloatingPointError, ZeroDivisionError,
                     np.linalg.LinAlgError)


# ---------------------------------------------------------------------------
# Target density

class LogPosterior:
    """Log posterior density over unconstrained coordinates, with gradient.

    Calling the object never raises for numerical trouble: a point where
    any term is undefined evaluates to ``(-inf, None)``, which the sampler
    treats as a divergent step.
    """

    def __init__(self, spec: ModelSpec, y):
        self.spec = spec
        self.layout = ParamLayout(spec)
        self.engine = LikelihoodEngine(spec, y)

    @property
    def dim(self):
        return self.layout.size

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            return -math.inf, None
        try:
            with np.errstate(all="ignore"):
                params = self.layout.constrain(u)
                lp_prior, g_prior = log_prior_and_grad(self.spec, params)
                if not np.isfinite(lp_prior):
                    return -math.inf, None
                ll, g_lik = self.engine.value_and_grad(params)
                if g_lik is None or not np.isfinite(ll):
                    return -math.inf, None
                log_jac, g_jac = self.layout.log_jacobian_and_grad(u)
                total = _add_gradients(g_lik, g_prior)
                grad = self.layout.pull_back(u, total) + g_jac
        except _NUMERIC_FAILURES:
            return -math.inf, None
        lp = ll + lp_prior + log_jac
        if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -math.inf, None
        return float(lp), grad

    def value(self, u):
        """Log posterior without the gradient (one forward pass)."""
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            return -math.inf
        try:
            with np.errstate(all="ignore"):
                params = self.layout.constrain(u)
                lp_prior = log_prior(self.spec, params)
                if not np.isfinite(lp_prior):
                    return -math.inf
                ll = _loglik_unchecked(self.engine, params)
                log_jac, _ = self.layout.log_jacobian_and_grad(u)
        except _NUMERIC_FAILURES:
            return -math.inf
        lp = ll + lp_prior + log_jac
        return float(lp) if np.isfinite(lp) else -math.inf


def _add_gradients(a, b):
    """Elementwise sum of two constrained-coordinate gradients."""
    harm = None if a.harmonic is None else a.harmonic + b.harmonic
    return type(a)(a.pi + b.pi, a.lam + b.lam, a.rho + b.rho, a.location + b.location,
                   harm, a.sigma2 + b.sigma2)


def _loglik_unchecked(engine: LikelihoodEngine, params: ParamVector):
    """Forward-pass log-likelihood without parameter validation."""
    s = engine.structure
    log_e = engine.log_emissions(params)
    values = phi_values(s, params.pi, hazard_tables(engine.spec, params).h)
    pi0, _ = initial_vector(engine.spec, s, values)
    status, total, *_ = engine._run_forward(log_e, pi0, values, False)
    return -math.inf if status else float(total)


def log_posterior_and_grad(spec: ModelSpec, u, y):
    """Unnormalized log posterior at unconstrained ``u`` and its gradient."""
    return LogPosterior(spec, y)(u)


# ---------------------------------------------------------------------------
# Starting values

def _kmeans_1d(x, K, n_iter=50):
    centers = np.quantile(x, (np.arange(K) + 0.5) / K)
    for _ in range(n_iter):
        labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        new = np.array([x[labels == k].mean() if np.any(labels == k) else centers[k]
                        for k in range(K)])
        if np.allclose(new, centers):
            break
        centers = new
    order = np.argsort(centers)
    rank = np.empty(K, dtype=int)
    rank[order] = np.arange(K)
    return centers[order], rank[labels]


def initial_guess(spec: ModelSpec, y) -> ParamVector:
    """Data-driven starting point: 1-D clustering for emissions, run lengths for dwells."""
    y = as_array(y)
    T, K = y.shape[0], spec.K
    harm = None
    resid = y
    if spec.harmonic:
        X = np.column_stack([np.ones(T), harmonic_design(T, spec.omega_hat)])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X[:, 1:] @ coef[1:]
        harm = np.tile(coef[1:], (K, 1))
    centers, labels = _kmeans_1d(resid, K)
    scale = max(float(np.std(resid)), 1e-8)
    min_gap = 1e-3 * scale
    for k in range(1, K):
        centers[k] = max(centers[k], centers[k - 1] + min_gap)
    sigma2 = np.empty(K)
    lam = np.empty(K)
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [T]]))
    for k in range(K):
        members = resid[labels == k]
        var = float(np.var(members)) if members.size > 1 else (scale / K) ** 2
        sigma2[k] = max(var, 1e-4 * scale ** 2)
        runs = lengths[labels[starts] == k]
        lam[k] = float(np.clip(runs.mean() - 1.0, 0.5, max(T / 2.0, 1.0))) if runs.size else 1.0
    pi = np.full((K, K), 1.0 / (K - 1))
    np.fill_diagonal(pi, 0.0)
    rho = None
    if spec.has_rho:
        rho = np.array([2.0 if d is DwellFamily.NEGBINOMIAL else np.nan for d in spec.dwell])
    return ParamVector(pi=pi, lam=lam, location=centers, sigma2=sigma2, rho=rho, harmonic=harm)


def _initial_point(target, spec, y, rng, init, radius, max_tries=100):
    layout = target.layout
    center = layout.unconstrain(initial_guess(spec, y)) if init == "data" else None
    for _ in range(max_tries):
        if init == "data":
            u = center + rng.uniform(-radius, radius, size=layout.size)
        else:
            u = rng.uniform(-radius, radius, size=layout.size)
        if np.isfinite(target(u)[0]):
            return u
    raise SamplingError(f"no finite starting point found in {max_tries} attempts")


# ---------------------------------------------------------------------------
# Posterior draws and diagnostics

@dataclass(eq=False)
class PosteriorDraws:
    """Post-warmup draws of every chain, stacked chain after chain.

    ``unconstrained`` holds the sampler coordinates and ``constrained`` the
    flattened parameters named by ``names``. Indexing returns a
    :class:`ParamVector`.
    """

    spec: ModelSpec
    unconstrained: np.ndarray
    lp: np.ndarray
    chain: np.ndarray
    n_warmup: int
    seed: object
    accept_stat: np.ndarray | None = None
    divergent: np.ndarray | None = None
    tree_depth: np.ndarray | None = None
    n_leapfrog: np.ndarray | None = None
    step_size: np.ndarray | None = None
    constrained: np.ndarray = field(init=False)

    def __post_init__(self):
        layout = ParamLayout(self.spec)
        self.layout = layout
        self.names = layout.constrained_names
        self.constrained = (np.array([layout.flatten(layout.constrain(u))
                                      for u in self.unconstrained])
                            if len(self.unconstrained) else np.empty((0, len(self.names))))

    def __len__(self):
        return self.unconstrained.shape[0]

    def __getitem__(self, m) -> ParamVector:
        return self.layout.constrain(self.unconstrained[m])

    def __iter__(self):
        return (self[m] for m in range(len(self)))

    @property
    def n_chains(self):
        return int(np.unique(self.chain).size)

    def by_chain(self, values):
        """Reshape a per-draw vector into ``(chains, draws)``."""
        values = np.asarray(values)
        chains = np.unique(self.chain)
        return np.stack([values[self.chain == c] for c in chains])

    def column(self, name):
        return self.constrained[:, self.names.index(name)]

    def mean(self) -> ParamVector:
        """Posterior mean of the constrained parameters."""
        return self.layout.unflatten(self.constrained.mean(axis=0))

    def subset(self, index):
        index = np.asarray(index)
        pick = (lambda a: None if a is None else a[index])
        return PosteriorDraws(self.spec, self.unconstrained[index], self.lp[index],
                              self.chain[index], self.n_warmup, self.seed,
                              pick(self.accept_stat), pick(self.divergent),
                              pick(self.tree_depth), pick(self.n_leapfrog), self.step_size)

    def to_csv(self, path):
        header = ",".join(["chain", "draw", "lp__"] + self.names)
        draw = np.concatenate([np.arange(np.sum(self.chain == c)) for c in np.unique(self.chain)])
        data = np.column_stack([self.chain, draw, self.lp, self.constrained])
        fmt = ["%d", "%d"] + ["%.17g"] * (data.shape[1] - 2)
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


@dataclass(eq=False)
class ChainDiagnostics:
    """Split-chain convergence statistics and sampler health."""

    rhat: dict
    ess: dict
    n_divergent: int
    n_draws: int
    mean_accept: float
    warnings: list

    @property
    def divergent_fraction(self):
        return self.n_divergent / self.n_draws if self.n_draws else 0.0

    @property
    def max_rhat(self):
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else np.nan

    @property
    def min_ess(self):
        vals = [v for v in self.ess.values() if np.isfinite(v)]
        return min(vals) if vals else np.nan

    @property
    def ok(self):
        return not self.warnings

    def to_dict(self):
        return {"rhat": self.rhat, "ess": self.ess, "n_divergent": self.n_divergent,
                "divergent_fraction": self.divergent_fraction, "n_draws": self.n_draws,
                "mean_accept": self.mean_accept, "warnings": list(self.warnings)}


def diagnose(draws: PosteriorDraws, rhat_threshold=1.01, divergence_threshold=0.01):
    """Split-R-hat and ESS of every parameter and of the log density.

    ESS values are capped at the number of draws so that antithetic chains
    do not report more information than they hold.
    """
    n = len(draws)
    rhat, ess = {}, {}
    columns = [("lp__", draws.lp)] + [(name, draws.constrained[:, i])
                                       for i, name in enumerate(draws.names)]
    multi = draws.n_chains >= 2
    for name, col in columns:
        x = draws.by_chain(col)
        rhat[name] = split_rhat(x) if multi else np.nan
        ess[name] = min(effective_sample_size(x), float(n))
    n_div = int(draws.divergent.sum()) if draws.divergent is not None else 0
    accept = float(np.mean(draws.accept_stat)) if draws.accept_stat is not None else np.nan
    notes = []
    if n and n_div / n > divergence_threshold:
        notes.append(f"{n_div} of {n} post-warmup transitions diverged")
    bad = sorted(k for k, v in rhat.items() if np.isfinite(v) and v > rhat_threshold)
    if bad:
        notes.append(f"split R-hat above {rhat_threshold} for: {', '.join(bad)}")
    return ChainDiagnostics(rhat, ess, n_div, n, accept, notes)


def _run_chain(spec, y, seed_seq, n_warmup, n_draws, max_depth, target_accept, init, radius):
    rng = np.random.default_rng(seed_seq)
    target = LogPosterior(spec, y)
    u0 = _initial_point(target, spec, y, rng, init, radius)
    return nuts_sample(target, u0, n_warmup, n_draws, rng, max_depth=max_depth,
                       target_accept=target_accept)


def sample_posterior(spec: ModelSpec, y, n_chains=4, n_warmup=1000, n_draws=1000, seed=None,
                     *, max_depth=10, target_accept=0.8, init="data", init_radius=None,
                     n_jobs=1, warn=True):
    """Draw from the posterior with NUTS.

    Each chain gets its own random stream spawned from ``seed``, so the
    draws of a chain do not depend on ``n_jobs``. ``init="data"`` starts
    chains at a jittered data-driven guess (``init_radius`` defaults to 1);
    ``init="uniform"`` draws every unconstrained coordinate from
    ``[-init_radius, init_radius]`` (default 2).

    Returns ``(PosteriorDraws, ChainDiagnostics)``.
    """
    if init not in ("data", "uniform"):
        raise ValueError("init must be 'data' or 'uniform'")
    radius = init_radius if init_radius is not None else (1.0 if init == "data" else 2.0)
    y = as_array(y)
    children = np.random.SeedSequence(seed).spawn(n_chains)
    args = [(spec, y, child, n_warmup, n_draws, max_depth, target_accept, init, radius)
            for child in children]
    if n_jobs and n_jobs > 1 and n_chains > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_chain, *zip(*args)))
    else:
        results = [_run_chain(*a) for a in args]
    draws = PosteriorDraws(
        spec=spec,
        unconstrained=np.vstack([r.samples for r in results]),
        lp=np.concatenate([r.lp for r in results]),
        chain=np.repeat(np.arange(n_chains), n_draws),
        n_warmup=n_warmup,
        seed=seed,
        accept_stat=np.concatenate([r.accept_stat for r in results]),
        divergent=np.concatenate([r.divergent for r in results]),
        tree_depth=np.concatenate([r.tree_depth for r in results]),
        n_leapfrog=np.concatenate([r.n_leapfrog for r in results]),
        step_size=np.array([r.step_size for r in results]))
    diag = diagnose(draws)
    if warn:
        for note in diag.warnings:
            warnings.warn(note, RuntimeWarning, stacklevel=2)
    return draws, diag


def posterior_summary(draws: PosteriorDraws, diagnostics: ChainDiagnostics | None = None,
                      levels=(0.90, 0.95)):
    """Posterior mean with sd and central credible interval for every constrained parameter."""
    out = {}
    for i, name in enumerate(draws.names):
        col = draws.constrained[:, i]
        row = {"mean": float(col.mean()), "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0}
        for level in levels:
            lo, hi = np.quantile(col, [(1 - level) / 2, (1 + level) / 2])
            row[f"ci{round(level * 100)}"] = [float(lo), float(hi)]
        if diagnostics is not None:
            row["rhat"] = diagnostics.rhat.get(name)
            row["ess"] = diagnostics.ess.get(name)
        out[name] = row
    return out


# ---------------------------------------------------------------------------
# Maximum likelihood

def n_free_parameters(spec: ModelSpec):
    """Number of free parameters counted by the information criteria."""
    K = spec.K
    n_nb = sum(d is DwellFamily.NEGBINOMIAL for d in spec.dwell)
    emission = (4 if spec.harmonic else 2) * K
    return K * (K - 2) + K + n_nb + emission


def aic(log_lik, n_params):
    return -2.0 * log_lik + 2.0 * n_params


def bic(log_lik, n_params, T):
    return -2.0 * log_lik + n_params * math.log(T)


@dataclass(frozen=True, eq=False)
class MLEResult:
    """Best local maximum over restarts; unpacks as ``(params, log_lik, aic, bic)``."""

    params: ParamVector
    log_likelihood: float
    aic: float
    bic: float
    n_params: int
    u: np.ndarray
    restart_log_likelihoods: tuple

    def __iter__(self):
        return iter((self.params, self.log_likelihood, self.aic, self.bic))


def _mle_bounds(layout: ParamLayout, y):
    var = max(float(np.var(y)), 1e-12)
    sl = layout.slices
    lo = np.full(layout.size, -np.inf)
    hi = np.full(layout.size, np.inf)
    lo[sl["pi"]], hi[sl["pi"]] = -30.0, 30.0
    lo[sl["lam"]], hi[sl["lam"]] = math.log(1e-4), math.log(1e5)
    lo[sl["rho"]], hi[sl["rho"]] = math.log(1e-3), math.log(1e4)
    lo[sl["sigma2"]], hi[sl["sigma2"]] = math.log(1e-6 * var), math.log(1e2 * var)
    return list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))


def maximize_likelihood(spec: ModelSpec, y, n_restarts=5, seed=None, jitter=1.0,
                        start: ParamVector | None = None) -> MLEResult:
    """Quasi-Newton maximization of the log-likelihood from several starts.

    The first start is ``start`` (or the data-driven guess); later ones add
    uniform jitter of half-width ``jitter`` on every unconstrained
    coordinate. Variances are bounded below by ``1e-6 * var(y)`` to keep the
    optimizer away from the unbounded spikes of Gaussian mixtures.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be at least 1")
    y = as_array(y)
    layout = ParamLayout(spec)
    engine = LikelihoodEngine(spec, y)
    rng = np.random.default_rng(seed)
    center = layout.unconstrain(start if start is not None else initial_guess(spec, y))
    bounds = _mle_bounds(layout, y)
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])

    def objective(u):
        try:
            with np.errstate(all="ignore"):
                params = layout.constrain(u)
                ll, g = engine.value_and_grad(params)
            if g is None or not np.isfinite(ll):
                return 1e300, np.zeros_like(u)
            grad = layout.pull_back(u, g)
        except _NUMERIC_FAILURES:
            return 1e300, np.zeros_like(u)
        if not np.all(np.isfinite(grad)):
            return 1e300, np.zeros_like(u)
        return -ll, -grad

    best, lls, failures = None, [], []
    for r in range(n_restarts):
        u0 = center if r == 0 else center + rng.uniform(-jitter, jitter, size=layout.size)
        u0 = np.clip(u0, lo, hi)
        if objective(u0)[0] >= 1e300:
            failures.append(f"restart {r}: non-finite likelihood at the start")
            lls.append(-math.inf)
            continue
        res = scipy.optimize.minimize(objective, u0, jac=True, method="L-BFGS-B", bounds=bounds,
                                      options={"maxiter": 2000, "maxfun": 5000})
        ll = -float(res.fun)
        if not np.isfinite(ll) or res.fun >= 1e300:
            failures.append(f"restart {r}: {res.message}")
            lls.append(-math.inf)
            continue
        lls.append(ll)
        if best is None or ll > -best.fun:
            best = res
    if best is None:
        raise OptimizationError("every restart failed:\n" + "\n".join(failures))
    ll = -float(best.fun)
    p = n_free_parameters(spec)
    return MLEResult(layout.constrain(best.x), ll, aic(ll, p), bic(ll, p, y.shape[0]), p,
                     best.x.copy(), tuple(lls))

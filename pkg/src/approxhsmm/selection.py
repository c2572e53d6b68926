"""Marginal likelihoods by bridge sampling and model comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .errors import ConvergenceError, DomainError, SamplingError
from .inference import LogPosterior, PosteriorDraws, aic, bic
from .model import ModelSpec

__all__ = ["MarginalLikelihoodEstimate", "bridge_sampling", "bridge_sampling_logml",
           "ModelComparison", "compare_models", "kass_raftery", "aic", "bic"]


@dataclass(frozen=True)
class MarginalLikelihoodEstimate:
    log_ml: float
    iterations: int
    rel_change: float
    n1: int
    n2: int


def _fit_normal(x, jitter=1e-8):
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        try:
            chol = linalg.cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            raise SamplingError("proposal covariance is not positive definite") from exc
    return mean, chol


def _normal_logpdf(x, mean, chol):
    z = linalg.solve_triangular(chol, (x - mean).T, lower=True)
    d = x.shape[1]
    return (-0.5 * np.sum(z ** 2, axis=0) - np.sum(np.log(np.diag(chol)))
            - 0.5 * d * math.log(2.0 * math.pi))


def bridge_sampling(log_density, fit_draws, eval_draws, n2=None, rng=None, r0=None,
                    tol=1e-10, max_iter=10_000):
    """Log normalizing constant of ``exp(log_density)`` by the optimal bridge.

    A normal proposal is matched to ``fit_draws``; ``eval_draws`` (posterior
    draws not used for the fit) and ``n2`` proposal draws enter the
    fixed-point iteration, which runs on the log scale. ``log_density``
    maps an ``(n, d)`` array to ``n`` log densities.
    """
    fit_draws = np.atleast_2d(np.asarray(fit_draws, dtype=float))
    eval_draws = np.atleast_2d(np.asarray(eval_draws, dtype=float))
    rng = np.random.default_rng(rng)
    n1 = eval_draws.shape[0]
    n2 = n1 if n2 is None else int(n2)
    mean, chol = _fit_normal(fit_draws)
    proposal = mean + rng.standard_normal((n2, mean.size)) @ chol.T
    l1 = np.asarray(log_density(eval_draws), dtype=float) - _normal_logpdf(eval_draws, mean, chol)
    l2 = np.asarray(log_density(proposal), dtype=float) - _normal_logpdf(proposal, mean, chol)
    if not np.all(np.isfinite(l1)):
        raise SamplingError("posterior draws with non-finite log density")
    lstar = float(np.median(l1))
    l1 = l1 - lstar
    l2 = l2 - lstar
    log_s1 = math.log(n1 / (n1 + n2))
    log_s2 = math.log(n2 / (n1 + n2))
    log_r = 0.0 if r0 is None else float(r0)
    change = math.inf
    for it in range(1, max_iter + 1):
        num = special.logsumexp(l2 - np.logaddexp(log_s1 + l2, log_s2 + log_r)) - math.log(n2)
        den = special.logsumexp(-np.logaddexp(log_s1 + l1, log_s2 + log_r)) - math.log(n1)
        new = num - den
        change = abs(math.expm1(new - log_r))
        log_r = new
        if change < tol:
            return MarginalLikelihoodEstimate(log_r + lstar, it, change, n1, n2)
    raise ConvergenceError(f"bridge iteration did not converge in {max_iter} steps "
                           f"(relative change {change:.3g})")


def bridge_sampling_logml(spec: ModelSpec, y, draws: PosteriorDraws, seed=None,
                          proposal_half="first", n2=None, proposal_seed=None,
                          tol=1e-10, max_iter=10_000) -> MarginalLikelihoodEstimate:
    """Log marginal likelihood of ``spec`` from its posterior draws.

    Each chain is cut in half; the ``proposal_half`` halves fit the normal
    proposal on unconstrained coordinates and the other halves are the
    posterior sample of the estimator, so no draw is used twice. The
    target includes the Jacobian of the constraining map.

    The proposal draws come from ``proposal_seed`` (default: ``draws.seed``)
    so the estimate is a function of the draws alone; ``seed`` only
    randomizes the starting value of the fixed-point iteration.
    """
    if proposal_half not in ("first", "second"):
        raise ValueError("proposal_half must be 'first' or 'second'")
    target = LogPosterior(spec, y)
    first, second = [], []
    for c in np.unique(draws.chain):
        idx = np.flatnonzero(draws.chain == c)
        half = idx.size // 2
        first.append(idx[:half])
        second.append(idx[half:])
    first, second = np.concatenate(first), np.concatenate(second)
    fit_idx, eval_idx = (first, second) if proposal_half == "first" else (second, first)
    U = draws.unconstrained

    def log_density(x):
        return np.array([target.value(u) for u in x])

    if proposal_seed is None:
        proposal_seed = draws.seed if isinstance(draws.seed, (int, np.integer)) else 0
    r0 = np.random.default_rng(seed).normal(scale=5.0) if seed is not None else None
    return bridge_sampling(log_density, U[fit_idx], U[eval_idx], n2=n2,
                           rng=np.random.default_rng([int(proposal_seed), 0x6272]), r0=r0,
                           tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# Comparison

KASS_RAFTERY = ((0.5, "not worth more than a bare mention"), (1.0, "substantial"),
                (2.0, "strong"), (math.inf, "decisive"))


def kass_raftery(log_bf):
    """Verbal category of a natural-log Bayes factor (by ``|log10 BF|``)."""
    x = abs(log_bf) / math.log(10.0)
    for bound, label in KASS_RAFTERY:
        if x < bound:
            return label
    return KASS_RAFTERY[-1][1]


_SCORE_TYPES = ("log_ml", "aic", "bic")


@dataclass(frozen=True, eq=False)
class ModelComparison:
    """Models ranked by a log-scale score (higher is better).

    ``log_bf[i, j]`` is ``score_i - score_j`` in ranked order; for AIC and
    BIC the score is ``-criterion / 2``.
    """

    names: list
    scores: np.ndarray
    score_type: str
    log_bf: np.ndarray
    categories: list

    def best(self):
        return self.names[0]

    def to_dict(self):
        return {"score_type": self.score_type, "ranking": list(self.names),
                "scores": self.scores.tolist(), "log_bayes_factor": self.log_bf.tolist(),
                "categories": self.categories}

    def report(self):
        width = max(5, *(len(n) for n in self.names))
        label = "log_ml" if self.score_type == "log_ml" else f"-{self.score_type}/2"
        lines = [f"{'model':<{width}}  {label:>12}  {'log BF vs best':>14}  evidence"]
        for i, name in enumerate(self.names):
            lbf = self.log_bf[0, i]
            cat = "-" if i == 0 else self.categories[0][i]
            lines.append(f"{name:<{width}}  {self.scores[i]:12.3f}  {lbf:14.3f}  {cat}")
        return "\n".join(lines)


def compare_models(estimates, score_type=None) -> ModelComparison:
    """Rank models and form pairwise log Bayes factors.

    ``estimates`` holds ``(name, score)`` or ``(name, score, score_type)``
    entries; a :class:`MarginalLikelihoodEstimate` score counts as
    ``"log_ml"``. AIC and BIC entries are given as the criterion itself.
    """
    if len(estimates) < 2:
        raise DomainError("need at least two models to compare")
    names, values, types = [], [], []
    for entry in estimates:
        name, score = entry[0], entry[1]
        kind = entry[2] if len(entry) > 2 else None
        if isinstance(score, MarginalLikelihoodEstimate):
            kind = kind or "log_ml"
            score = score.log_ml
        kind = kind or score_type or "log_ml"
        if kind not in _SCORE_TYPES:
            raise DomainError(f"unknown score type {kind!r}")
        names.append(str(name))
        values.append(float(score) if kind == "log_ml" else -0.5 * float(score))
        types.append(kind)
    if len(set(types)) > 1:
        raise DomainError(f"cannot compare mixed score types {sorted(set(types))}")
    order = np.argsort(-np.asarray(values), kind="stable")
    scores = np.asarray(values)[order]
    ranked = [names[i] for i in order]
    log_bf = scores[:, None] - scores[None, :]
    cats = [[kass_raftery(v) for v in row] for row in log_bf]
    return ModelComparison(ranked, scores, types[0], log_bf, cats)

"""Simulators for hidden Markov, hidden semi-Markov and expanded-state models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import build_phi
from .likelihood import initial_vector, segment_stationary
from .model import (DwellFamily, ModelSpec, ParamVector, TimeSeries, dwell_logpmf_array,
                    dwell_logsurvival_array, dwell_quantile_support, emission_means)


@dataclass(frozen=True, eq=False)
class SimOutput:
    """Simulated series with its hidden truth.

    ``true_segments`` lists ``(state, dwell, censored)`` triples; only the
    last segment can be censored by the end of the series. The first one is
    also marked censored when it started before the first observation.
    """

    y: TimeSeries
    true_states: np.ndarray
    true_segments: list
    expanded_states: np.ndarray | None = None

    def to_csv(self, path):
        t = np.arange(1, self.y.T + 1)
        data = np.column_stack([t, self.y.y, self.true_states + 1])
        np.savetxt(path, data, delimiter=",", header="t,y,true_state", comments="",
                   fmt=["%d", "%.17g", "%d"])


def _emit(params, states, omega_hat, rng):
    T = states.shape[0]
    means = emission_means(params, T, omega_hat)[np.arange(T), states]
    return means + np.sqrt(params.sigma2[states]) * rng.standard_normal(T)


def run_length_segments(states, first_censored=False):
    """``(state, length, censored)`` runs of an integer state path."""
    states = np.asarray(states)
    if states.size == 0:
        return []
    change = np.flatnonzero(np.diff(states)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [states.size]])
    segs = [(int(states[s]), int(e - s), False) for s, e in zip(starts, ends)]
    last = segs[-1]
    segs[-1] = (last[0], last[1], True)
    if first_censored:
        first = segs[0]
        segs[0] = (first[0], first[1], True)
    return segs


def sample_dwell(family, lam, rho, rng, size=None):
    """Draw dwell lengths ``d >= 1``."""
    family = DwellFamily(family)
    if family is DwellFamily.GEOMETRIC:
        return rng.geometric(1.0 / (1.0 + lam), size=size)
    if family is DwellFamily.POISSON:
        return 1 + rng.poisson(lam, size=size)
    return 1 + rng.negative_binomial(rho, rho / (rho + lam), size=size)


def _rho(spec, params, j):
    return params.rho_of(j) if spec.dwell[j] is DwellFamily.NEGBINOMIAL else None


def _equilibrium_start(spec, params, rng):
    """State and total dwell of the segment covering the first observation.

    Returns ``(state, dwell, position)``: the first observation is at
    position ``position`` (1-based) of a dwell of length ``dwell``.
    """
    psi = segment_stationary(params.pi)
    tables = []
    for j in range(spec.K):
        rho = _rho(spec, params, j)
        D = dwell_quantile_support(spec.dwell[j], float(params.lam[j]), rho, 1e-15)
        r = np.arange(1, D + 1)
        tables.append((np.exp(dwell_logsurvival_array(spec.dwell[j], params.lam[j], rho, r)),
                       np.exp(dwell_logpmf_array(spec.dwell[j], params.lam[j], rho, r))))
    weight = np.array([psi[j] * tables[j][0].sum() for j in range(spec.K)])
    j = int(rng.choice(spec.K, p=weight / weight.sum()))
    surv, pmf = tables[j]
    pos = int(rng.choice(surv.size, p=surv / surv.sum())) + 1
    tail = pmf[pos - 1:]
    dwell = pos + int(rng.choice(tail.size, p=tail / tail.sum()))
    return j, dwell, pos


def simulate_hsmm(spec: ModelSpec, params: ParamVector, T, seed=None, initial=None) -> SimOutput:
    """Simulate an exact hidden semi-Markov model (thresholds are ignored).

    ``initial`` defaults to ``spec.initial``. ``"stationary"`` starts inside
    a dwell drawn from the equilibrium of the process, so the first segment
    may have begun before the first observation.
    """
    rng = np.random.default_rng(seed)
    if initial is None:
        initial = spec.initial
    K = spec.K
    states = np.empty(T, dtype=np.int64)
    first_censored = False
    if isinstance(initial, str):
        j, dwell, pos = _equilibrium_start(spec, params, rng)
        remaining = dwell - pos + 1
        first_censored = pos > 1
    else:
        p0 = np.eye(K)[int(initial)] if isinstance(initial, (int, np.integer)) else np.asarray(initial)
        j = int(rng.choice(K, p=p0))
        remaining = int(sample_dwell(spec.dwell[j], params.lam[j], _rho(spec, params, j), rng))
    t = 0
    while t < T:
        n = min(remaining, T - t)
        states[t:t + n] = j
        t += n
        if t >= T:
            break
        j = int(rng.choice(K, p=params.pi[j]))
        remaining = int(sample_dwell(spec.dwell[j], params.lam[j], _rho(spec, params, j), rng))
    y = _emit(params, states, spec.omega_hat, rng)
    return SimOutput(TimeSeries(y), states, run_length_segments(states, first_censored))


def simulate_hmm(gamma, mu, sigma2, T, seed=None, initial=None) -> SimOutput:
    """Simulate a Gaussian hidden Markov model with transition matrix ``gamma``."""
    rng = np.random.default_rng(seed)
    gamma = np.asarray(gamma, dtype=float)
    K = gamma.shape[0]
    if initial is None:
        try:
            p0 = segment_stationary(gamma)
        except Exception:
            p0 = np.full(K, 1.0 / K)
    elif isinstance(initial, (int, np.integer)):
        p0 = np.eye(K)[int(initial)]
    else:
        p0 = np.asarray(initial, dtype=float)
    cum = np.cumsum(gamma, axis=1)
    u = rng.random(T)
    states = np.empty(T, dtype=np.int64)
    s = int(rng.choice(K, p=p0))
    for t in range(T):
        if t > 0:
            s = min(int(np.searchsorted(cum[s], u[t], side="right")), K - 1)
        states[t] = s
    mu = np.asarray(mu, dtype=float)
    sd = np.sqrt(np.asarray(sigma2, dtype=float))
    y = mu[states] + sd[states] * rng.standard_normal(T)
    return SimOutput(TimeSeries(y), states, run_length_segments(states))


def simulate_embedded(spec: ModelSpec, params: ParamVector, T, seed=None) -> SimOutput:
    """Simulate the expanded-state Markov chain and emit through state owners."""
    rng = np.random.default_rng(seed)
    phi = build_phi(spec, params)
    pi0, _ = initial_vector(spec, phi.structure, phi.values)
    row_ptr, cols, vals = phi.row_ptr, phi.col_idx, phi.values
    cum = [np.cumsum(vals[row_ptr[i]:row_ptr[i + 1]]) for i in range(phi.dim)]
    u = rng.random(T)
    z = np.empty(T, dtype=np.int64)
    i = int(rng.choice(phi.dim, p=pi0 / pi0.sum()))
    for t in range(T):
        if t > 0:
            c = cum[i]
            k = min(int(np.searchsorted(c, u[t] * c[-1], side="right")), c.size - 1)
            i = int(cols[row_ptr[i] + k])
        z[t] = i
    states = phi.owner[z]
    y = _emit(params, states, spec.omega_hat, rng)
    first_censored = spec.initial == "stationary"
    return SimOutput(TimeSeries(y), states, run_length_segments(states, first_censored), z)

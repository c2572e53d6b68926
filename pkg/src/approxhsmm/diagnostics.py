"""Convergence diagnostics for multiple Markov chains.

Both statistics work on split chains: each chain is cut into a first and a
second half, which makes slow drifts within a chain look like disagreement
between chains.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import next_fast_len


def split_chains(x):
    """``(C, N)`` draws to ``(2C, N // 2)`` half-chains (the middle draw of odd N is dropped)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, x.shape[1] - half:]])


def autocovariance(x):
    """Biased autocovariance of each row at lags ``0 .. N-1`` via FFT."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    m = next_fast_len(2 * n)
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, n=m, axis=1)
    return np.fft.irfft(f * np.conjugate(f), n=m, axis=1)[:, :n] / n


def split_rhat(x):
    """Split potential scale reduction factor of ``(C, N)`` draws."""
    z = split_chains(x)
    n = z.shape[1]
    if n < 2 or z.shape[0] < 2:
        return np.nan
    within = np.mean(np.var(z, axis=1, ddof=1))
    between = n * np.var(np.mean(z, axis=1), ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    return float(np.sqrt((between / within + n - 1.0) / n))


def effective_sample_size(x):
    """Effective sample size of the mean from ``(C, N)`` draws.

    Autocorrelations are combined across split chains and truncated with
    Geyer's initial positive and initial monotone sequence rules.
    """
    z = split_chains(x)
    n_chain, n = z.shape
    if n < 4:
        return np.nan
    acov = autocovariance(z)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if n_chain > 1:
        var_plus += np.var(np.mean(z, axis=1), ddof=1)
    if var_plus == 0.0:
        return float(n_chain * n)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    total = n_chain * n
    tau = -1.0 + 2.0 * np.sum(rho[:max_t + 1]) + np.sum(rho[max_t + 1:max_t + 2])
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def mcse_mean(x):
    """Monte Carlo standard error of the mean of ``(C, N)`` draws."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(np.std(x, ddof=1) / np.sqrt(effective_sample_size(x)))

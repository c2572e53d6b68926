"""Frequency identification for harmonic emissions.

The stationary periodic model is ``y_t = b1 cos(2 pi w t) + b2 sin(2 pi w t)
+ e_t`` with ``e_t ~ N(0, s2)``, ``w`` uniform on ``(0, phi_omega)``,
``(b1, b2) ~ N(0, sigma2_beta I)`` and ``s2 ~ InvGamma(xi0 / 2, tau0 / 2)``.
The sampler alternates a Metropolis step for ``w`` (a random walk, or with
probability ``pi_omega`` an independence draw shaped like the periodogram)
with Gibbs draws of the coefficients and the noise variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .model import as_array


def periodogram(y, method="auto", chunk=512):
    """``I_h = |sum_t y_t exp(-2 pi i t h / T)|^2 / T`` for ``h = 0..T-1``.

    ``method="fft"`` uses the fast transform, ``"direct"`` the explicit sum;
    ``"auto"`` picks the FFT when ``T`` factors into small primes.
    """
    y = as_array(y)
    T = y.shape[0]
    if T < 2:
        raise ValueError("the periodogram needs at least two observations")
    if method == "auto":
        method = "fft" if next_fast_len(T) == T else "direct"
    if method == "fft":
        return np.abs(np.fft.fft(y)) ** 2 / T
    if method != "direct":
        raise ValueError(f"unknown periodogram method {method!r}")
    t = np.arange(1, T + 1)
    out = np.empty(T)
    for lo in range(0, T, chunk):
        h = np.arange(lo, min(lo + chunk, T))
        # reduce t * h modulo T before scaling to keep the phase exact
        phase = 2.0 * np.pi * ((h[:, None] * t[None, :]) % T) / T
        out[h] = np.abs(np.exp(-1j * phase) @ y) ** 2 / T
    return out


@dataclass(frozen=True)
class FrequencySamplerConfig:
    """Prior and proposal settings of :func:`sample_frequency_posterior`.

    ``sigma2_omega=None`` means ``1 / (25 T)``. With ``adapt`` set, the
    random-walk scale is tuned during burn-in towards ``target_accept`` and
    frozen afterwards. ``center`` subtracts the sample mean first, since the
    periodic model has no intercept.
    """

    phi_omega: float = 0.1
    sigma2_beta: float = 5.0
    xi0: float = 4.0
    tau0: float = 1.0
    sigma2_omega: float | None = None
    pi_omega: float = 0.1
    burn_in: float = 0.2
    adapt: bool = True
    target_accept: float = 0.3
    center: bool = True


@dataclass(frozen=True, eq=False)
class PeriodicPosterior:
    """Post-burn-in draws of the periodic model."""

    omega_draws: np.ndarray
    beta_draws: np.ndarray
    sigma2_draws: np.ndarray
    acceptance_rate: float
    acceptance_random_walk: float
    acceptance_periodogram: float
    rw_scale: float
    n_burn_in: int

    @property
    def omega_hat(self):
        return float(self.omega_draws.mean())

    def to_csv(self, path):
        data = np.column_stack([self.omega_draws, self.beta_draws, self.sigma2_draws])
        np.savetxt(path, data, delimiter=",", header="omega,beta1,beta2,sigma2", comments="",
                   fmt="%.17g")

    def summary(self):
        return {"omega_hat": self.omega_hat,
                "omega_ci95": np.quantile(self.omega_draws, [0.025, 0.975]).tolist(),
                "beta_mean": self.beta_draws.mean(axis=0).tolist(),
                "sigma2_mean": float(self.sigma2_draws.mean()),
                "acceptance_rate": self.acceptance_rate,
                "n_draws": int(self.omega_draws.size)}


class PeriodogramProposal:
    """Independence proposal whose density is the periodogram histogram on ``(0, phi)``.

    Bin ``h`` covers ``[h / T, (h + 1) / T)``; the last bin is cut at
    ``phi``. Within a bin the proposal is uniform.
    """

    def __init__(self, I, T, phi):
        n_bins = min(int(math.ceil(phi * T)), I.shape[0])
        self.T = T
        self.phi = phi
        self.lo = np.arange(n_bins) / T
        self.hi = np.minimum((np.arange(n_bins) + 1) / T, phi)
        mass = np.asarray(I[:n_bins], dtype=float).copy()
        mass[self.hi <= self.lo] = 0.0
        total = mass.sum()
        self.valid = bool(total > 0 and np.isfinite(total))
        self.prob = mass / total if self.valid else mass
        self.cdf = np.cumsum(self.prob)

    def sample(self, rng):
        h = int(np.searchsorted(self.cdf, rng.random() * self.cdf[-1], side="right"))
        h = min(h, self.prob.size - 1)
        return self.lo[h] + rng.random() * (self.hi[h] - self.lo[h])

    def logpdf(self, omega):
        if not 0.0 < omega < self.phi:
            return -math.inf
        h = min(int(omega * self.T), self.prob.size - 1)
        p = self.prob[h]
        return math.log(p / (self.hi[h] - self.lo[h])) if p > 0 else -math.inf


def design(omega, t):
    """``(T, 2)`` matrix of ``cos(2 pi w t)`` and ``sin(2 pi w t)``."""
    arg = 2.0 * np.pi * omega * t
    return np.column_stack([np.cos(arg), np.sin(arg)])


def log_omega_target(omega, y, t, beta, sigma2, phi):
    """Log conditional density of the frequency up to a constant."""
    if not 0.0 < omega < phi:
        return -math.inf
    r = y - design(omega, t) @ beta
    return -0.5 * float(r @ r) / sigma2


def periodogram_move(omega, proposal: PeriodogramProposal, y, t, beta, sigma2, phi, rng):
    """Independence step; returns ``(omega, accepted, log_ratio)``."""
    cand = proposal.sample(rng)
    log_ratio = (log_omega_target(cand, y, t, beta, sigma2, phi)
                 - log_omega_target(omega, y, t, beta, sigma2, phi)
                 + proposal.logpdf(omega) - proposal.logpdf(cand))
    if math.log(rng.random()) < log_ratio:
        return cand, True, log_ratio
    return omega, False, log_ratio


def random_walk_move(omega, scale, y, t, beta, sigma2, phi, rng):
    """Symmetric random-walk step; returns ``(omega, accepted, log_ratio)``."""
    cand = omega + scale * rng.standard_normal()
    log_ratio = (log_omega_target(cand, y, t, beta, sigma2, phi)
                 - log_omega_target(omega, y, t, beta, sigma2, phi))
    if math.log(rng.random()) < log_ratio:
        return cand, True, log_ratio
    return omega, False, log_ratio


def beta_conditional(omega, y, t, sigma2, sigma2_beta):
    """Mean and covariance of the Gaussian full conditional of the coefficients."""
    X = design(omega, t)
    prec = np.eye(2) / sigma2_beta + X.T @ X / sigma2
    V = np.linalg.inv(prec)
    return V @ (X.T @ y) / sigma2, V


def sigma2_conditional(omega, y, t, beta, xi0, tau0):
    """Shape and scale of the inverse-gamma full conditional of the noise variance."""
    r = y - design(omega, t) @ beta
    return 0.5 * (y.shape[0] + xi0), 0.5 * (tau0 + float(r @ r))


def sample_frequency_posterior(y, n_iter=5000, config: FrequencySamplerConfig | None = None,
                               seed=None) -> PeriodicPosterior:
    """Metropolis-within-Gibbs draws of the frequency together with the regression block.

    The chain starts at the centre of the highest periodogram bin inside
    ``(0, phi_omega)`` with least-squares coefficients. The first
    ``burn_in * n_iter`` iterations are discarded.
    """
    cfg = config or FrequencySamplerConfig()
    if n_iter < 100:
        raise ValueError("n_iter must be at least 100")
    y = as_array(y)
    if cfg.center:
        y = y - y.mean()
    T = y.shape[0]
    t = np.arange(1, T + 1, dtype=float)
    rng = np.random.default_rng(seed)
    phi = cfg.phi_omega
    I = periodogram(y)
    proposal = PeriodogramProposal(I, T, phi)
    pi_omega = cfg.pi_omega
    if not proposal.valid:
        warnings.warn("no periodogram mass inside (0, phi_omega); using the random walk only",
                      RuntimeWarning, stacklevel=2)
        pi_omega = 0.0
    scale = math.sqrt(cfg.sigma2_omega if cfg.sigma2_omega is not None else 1.0 / (25.0 * T))
    n_bins = proposal.prob.size
    peak = int(np.argmax(I[1:n_bins])) + 1 if n_bins > 1 else 0
    omega = 0.5 * (proposal.lo[peak] + proposal.hi[peak])
    beta = np.linalg.lstsq(design(omega, t), y, rcond=None)[0]
    resid = y - design(omega, t) @ beta
    sigma2 = max(float(resid @ resid) / T, 1e-12)

    n_burn = int(cfg.burn_in * n_iter)
    n_keep = n_iter - n_burn
    omegas = np.empty(n_keep)
    betas = np.empty((n_keep, 2))
    sigmas = np.empty(n_keep)
    counts = {"rw": [0, 0], "pg": [0, 0]}
    n_rw_burn = 0
    for it in range(n_iter):
        keep = it >= n_burn
        if rng.random() < pi_omega:
            omega, acc, _ = periodogram_move(omega, proposal, y, t, beta, sigma2, phi, rng)
            kind = "pg"
        else:
            omega, acc, _ = random_walk_move(omega, scale, y, t, beta, sigma2, phi, rng)
            kind = "rw"
            if cfg.adapt and not keep:
                n_rw_burn += 1
                scale *= math.exp((float(acc) - cfg.target_accept) / n_rw_burn ** 0.6)
        if keep:
            counts[kind][0] += int(acc)
            counts[kind][1] += 1
        mean, V = beta_conditional(omega, y, t, sigma2, cfg.sigma2_beta)
        beta = rng.multivariate_normal(mean, V)
        shape, sc = sigma2_conditional(omega, y, t, beta, cfg.xi0, cfg.tau0)
        sigma2 = sc / rng.gamma(shape)
        if keep:
            k = it - n_burn
            omegas[k], betas[k], sigmas[k] = omega, beta, sigma2

    def rate(c):
        return c[0] / c[1] if c[1] else float("nan")

    total = counts["rw"][0] + counts["pg"][0]
    return PeriodicPosterior(omegas, betas, sigmas, total / max(n_keep, 1), rate(counts["rw"]),
                             rate(counts["pg"]), scale, n_burn)

"""No-U-turn Hamiltonian Monte Carlo with warmup adaptation.

The transition is the multinomial variant with the generalized U-turn
criterion evaluated across and between merged subtrees. Warmup follows the
usual three-phase schedule: a fast initial buffer for step size only, a
sequence of doubling slow windows that estimate a diagonal inverse metric
from the draws, and a terminal buffer that settles the step size. Step size
adaptation is Nesterov dual averaging towards a target mean acceptance
statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DualAveraging:
    """Step-size adaptation by dual averaging."""

    target: float = 0.8
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    mu: float = 0.0
    counter: int = 0
    s_bar: float = 0.0
    x_bar: float = 0.0

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        accept_stat = min(1.0, accept_stat)
        self.counter += 1
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final_step_size(self):
        return math.exp(self.x_bar)


class WindowedAdaptation:
    """Schedule of metric-adaptation windows within the warmup phase."""

    def __init__(self, n_warmup, init_buffer=75, term_buffer=50, base_window=25):
        if n_warmup < 20:
            self.active = False
            init_buffer, term_buffer, base_window = n_warmup, 0, 0
        else:
            self.active = True
            if init_buffer + base_window + term_buffer > n_warmup:
                init_buffer = int(0.15 * n_warmup)
                term_buffer = int(0.1 * n_warmup)
                base_window = n_warmup - (init_buffer + term_buffer)
        self.n_warmup = n_warmup
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.window_size = base_window
        self.window_end = init_buffer + base_window
        self.counter = 0

    def in_slow_window(self):
        return (self.active and self.counter >= self.init_buffer
                and self.counter < self.n_warmup - self.term_buffer)

    def end_of_window(self):
        return (self.active and self.counter == self.window_end
                and self.counter <= self.n_warmup - self.term_buffer)

    def advance(self):
        """Move to the next iteration; returns True when a window just closed."""
        self.counter += 1
        if not self.end_of_window():
            return False
        self.window_size *= 2
        next_end = self.window_end + self.window_size
        # absorb a short final window into the current one
        if next_end + 2 * self.window_size > self.n_warmup - self.term_buffer:
            next_end = self.n_warmup - self.term_buffer
        self.window_end = next_end
        return True


class _Welford:
    def __init__(self, d):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros(d)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self):
        n = self.n
        var = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    lp: float


@dataclass
class NutsResult:
    """Output of one chain; warmup iterations are not included."""

    samples: np.ndarray
    lp: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    tree_depth: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    warmup_divergent: int = 0
    n_gradient_evals: int = 0
    extra: dict = field(default_factory=dict)


class NutsSampler:
    """One chain of NUTS on a target returning ``(log_density, gradient)``."""

    def __init__(self, logp_grad, dim, rng, max_depth=10, max_delta_h=1000.0,
                 inv_metric=None, step_size=1.0):
        self.logp_grad = logp_grad
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.max_delta_h = max_delta_h
        self.inv_metric = np.ones(dim) if inv_metric is None else np.asarray(inv_metric, float)
        self.step_size = step_size
        self.n_evals = 0

    # -- Hamiltonian pieces ------------------------------------------------
    def _eval(self, q):
        self.n_evals += 1
        lp, grad = self.logp_grad(q)
        if not np.isfinite(lp) or grad is None or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return float(lp), np.asarray(grad, dtype=float)

    def _kinetic(self, p):
        return 0.5 * float(np.dot(p * self.inv_metric, p))

    def _hamiltonian(self, z):
        return -z.lp + self._kinetic(z.p)

    def _leapfrog(self, z, eps):
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        lp, grad = self._eval(q)
        if np.isfinite(lp):
            p = p + 0.5 * eps * grad
        return _Point(q, p, grad, lp)

    def _sample_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    # -- tree building -------------------------------------------------------
    @staticmethod
    def _criterion(p_sharp_minus, p_sharp_plus, rho):
        return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0

    def _build_tree(self, depth, z, sign, H0, st):
        """Extend ``z`` by ``2**depth`` leapfrog steps.

        Returns ``(valid, z_end, z_propose, log_w, rho, p_beg, p_end,
        p_sharp_beg, p_sharp_end)``.
        """
        if depth == 0:
            z_new = self._leapfrog(z, sign * self.step_size)
            st["n_leapfrog"] += 1
            h = self._hamiltonian(z_new) if np.isfinite(z_new.lp) else np.inf
            if math.isnan(h):
                h = np.inf
            if h - H0 > self.max_delta_h:
                st["divergent"] = True
            log_w = H0 - h
            st["sum_metro"] += 1.0 if log_w > 0 else math.exp(log_w)
            p_sharp = self.inv_metric * z_new.p
            return (not st["divergent"], z_new, z_new, log_w, z_new.p.copy(), z_new.p,
                    z_new.p, p_sharp, p_sharp)
        (valid, z_mid, prop_init, lw_init, rho_init, p_beg, p_init_end, ps_beg,
         ps_init_end) = self._build_tree(depth - 1, z, sign, H0, st)
        if not valid:
            return (False, z_mid, prop_init, lw_init, rho_init, p_beg, p_init_end, ps_beg,
                    ps_init_end)
        (valid, z_end, prop_final, lw_final, rho_final, p_final_beg, p_end, ps_final_beg,
         ps_end) = self._build_tree(depth - 1, z_mid, sign, H0, st)
        if not valid:
            return (False, z_end, prop_final, lw_final, rho_final, p_beg, p_end, ps_beg, ps_end)
        log_w = np.logaddexp(lw_init, lw_final)
        if lw_final > log_w:
            z_propose = prop_final
        else:
            z_propose = prop_final if self.rng.random() < math.exp(lw_final - log_w) else prop_init
        rho = rho_init + rho_final
        persist = self._criterion(ps_beg, ps_end, rho)
        persist &= self._criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist &= self._criterion(ps_init_end, ps_end, rho_final + p_init_end)
        return persist, z_end, z_propose, log_w, rho, p_beg, p_end, ps_beg, ps_end

    def transition(self, z0: _Point):
        """One NUTS transition from ``z0`` (whose momentum is resampled)."""
        z0 = _Point(z0.q, self._sample_momentum(), z0.grad, z0.lp)
        H0 = self._hamiltonian(z0)
        z_fwd = z_bck = z0
        z_sample = z0
        p_sharp0 = self.inv_metric * z0.p
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = z0.p
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = p_sharp0
        rho = z0.p.copy()
        log_sum_w = 0.0
        st = {"n_leapfrog": 0, "sum_metro": 0.0, "divergent": False}
        depth = 0
        while depth < self.max_depth:
            if self.rng.random() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_bck, ps_fwd_bck
                (valid, z_fwd, z_prop, lw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd, ps_fwd_bck,
                 ps_fwd_fwd) = self._build_tree(depth, z_fwd, 1.0, H0, st)
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_fwd, ps_bck_fwd
                (valid, z_bck, z_prop, lw_sub, rho_bck, p_bck_fwd, p_bck_bck, ps_bck_fwd,
                 ps_bck_bck) = self._build_tree(depth, z_bck, -1.0, H0, st)
            if not valid:
                break
            depth += 1
            if lw_sub > log_sum_w:
                z_sample = z_prop
            elif self.rng.random() < math.exp(lw_sub - log_sum_w):
                z_sample = z_prop
            log_sum_w = float(np.logaddexp(log_sum_w, lw_sub))
            rho = rho_bck + rho_fwd
            persist = self._criterion(ps_bck_bck, ps_fwd_fwd, rho)
            persist &= self._criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist &= self._criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        n = st["n_leapfrog"]
        accept = st["sum_metro"] / n if n else 0.0
        return z_sample, accept, n, depth, st["divergent"]

    # -- step size initialization -------------------------------------------
    def init_step_size(self, z: _Point):
        """Double or halve the step size until one leapfrog step crosses 0.8 acceptance."""
        direction = 0
        for _ in range(100):
            p = self._sample_momentum()
            z0 = _Point(z.q, p, z.grad, z.lp)
            H0 = self._hamiltonian(z0)
            z1 = self._leapfrog(z0, self.step_size)
            h = self._hamiltonian(z1) if np.isfinite(z1.lp) else np.inf
            delta = H0 - h
            if direction == 0:
                direction = 1 if delta > math.log(0.8) else -1
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and not delta < math.log(0.8):
                break
            self.step_size = self.step_size * 2.0 if direction == 1 else self.step_size / 2.0
            if self.step_size > 1e7 or self.step_size < 1e-12:
                break
        return self.step_size


def nuts_sample(logp_grad, x0, n_warmup, n_draws, rng, max_depth=10, target_accept=0.8,
                adapt_metric=True, step_size=1.0, inv_metric=None, callback=None):
    """Run one NUTS chain from ``x0`` and return a :class:`NutsResult`."""
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    sampler = NutsSampler(logp_grad, dim, rng, max_depth=max_depth, inv_metric=inv_metric,
                          step_size=step_size)
    lp, grad = sampler._eval(x0)
    if not np.isfinite(lp):
        raise ValueError("log density is not finite at the initial point")
    z = _Point(x0, np.zeros(dim), grad, lp)
    sampler.init_step_size(z)
    dual = DualAveraging(target=target_accept)
    dual.restart(sampler.step_size)
    windows = WindowedAdaptation(n_warmup)
    welford = _Welford(dim)
    warm_div = 0
    for _ in range(n_warmup):
        z, accept, _, _, div = sampler.transition(z)
        warm_div += int(div)
        sampler.step_size = dual.update(accept)
        if adapt_metric and windows.in_slow_window():
            welford.add(z.q)
        if windows.advance() and adapt_metric:
            sampler.inv_metric = welford.regularized_variance()
            welford = _Welford(dim)
            sampler.init_step_size(z)
            dual.restart(sampler.step_size)
    if n_warmup > 0:
        sampler.step_size = dual.final_step_size
    samples = np.empty((n_draws, dim))
    lps = np.empty(n_draws)
    acc = np.empty(n_draws)
    nleap = np.empty(n_draws, dtype=np.int64)
    depths = np.empty(n_draws, dtype=np.int64)
    divs = np.zeros(n_draws, dtype=bool)
    for m in range(n_draws):
        z, accept, n, depth, div = sampler.transition(z)
        samples[m] = z.q
        lps[m] = z.lp
        acc[m], nleap[m], depths[m], divs[m] = accept, n, depth, div
        if callback is not None:
            callback(m, z.q)
    return NutsResult(samples, lps, acc, nleap, depths, divs, sampler.step_size,
                      sampler.inv_metric.copy(), warm_div, sampler.n_evals)

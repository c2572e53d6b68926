"""Bijection between model parameters and an unconstrained real vector.

Layout of the unconstrained vector, block by block:

1. transition rows (only when K > 2): for each state ``j`` the K - 2
   additive log-ratio coordinates of its off-diagonal probabilities, the
   last off-diagonal entry serving as reference;
2. ``log lam_j`` for every state;
3. ``log rho_j`` for negative binomial states;
4. emission locations: either free, or ordered as ``mu_1`` followed by
   ``log(mu_k - mu_{k-1})``;
5. harmonic coefficients ``beta1_j, beta2_j`` (harmonic emissions only);
6. ``log sigma2_j`` for every state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .likelihood import ParamGradient
from .model import DwellFamily, ModelSpec, ParamVector


@dataclass(frozen=True, eq=False)
class ParamLayout:
    spec: ModelSpec

    def __post_init__(self):
        spec = self.spec
        K = spec.K
        nb = np.array([d is DwellFamily.NEGBINOMIAL for d in spec.dwell])
        sizes = {
            "pi": K * (K - 2),
            "lam": K,
            "rho": int(nb.sum()),
            "loc": K,
            "harm": 2 * K if spec.harmonic else 0,
            "sigma2": K,
        }
        slices, start = {}, 0
        for name, n in sizes.items():
            slices[name] = slice(start, start + n)
            start += n
        object.__setattr__(self, "nb", nb)
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "size", start)

    # -- names --------------------------------------------------------------
    @property
    def names(self):
        """Names of the unconstrained coordinates."""
        K = self.spec.K
        out = [f"alr_pi[{j + 1},{k + 1}]" for j in range(K)
               for k in self._others(j)[:-1]] if K > 2 else []
        out += [f"log_lambda[{j + 1}]" for j in range(K)]
        out += [f"log_rho[{j + 1}]" for j in np.flatnonzero(self.nb)]
        loc = "beta0" if self.spec.harmonic else "mu"
        if self.spec.ordered:
            out += [f"{loc}[1]"] + [f"log_diff_{loc}[{j + 1}]" for j in range(1, K)]
        else:
            out += [f"{loc}[{j + 1}]" for j in range(K)]
        if self.spec.harmonic:
            out += [f"beta{c}[{j + 1}]" for j in range(K) for c in (1, 2)]
        out += [f"log_sigma2[{j + 1}]" for j in range(K)]
        return out

    @property
    def constrained_names(self):
        """Column names of :meth:`flatten`."""
        K = self.spec.K
        out = [f"pi[{j + 1},{k + 1}]" for j in range(K) for k in self._others(j)]
        out += [f"lambda[{j + 1}]" for j in range(K)]
        out += [f"rho[{j + 1}]" for j in np.flatnonzero(self.nb)]
        if self.spec.harmonic:
            out += [f"beta0[{j + 1}]" for j in range(K)]
            out += [f"beta{c}[{j + 1}]" for j in range(K) for c in (1, 2)]
        else:
            out += [f"mu[{j + 1}]" for j in range(K)]
        out += [f"sigma2[{j + 1}]" for j in range(K)]
        return out

    def _others(self, j):
        return [k for k in range(self.spec.K) if k != j]

    # -- maps ---------------------------------------------------------------
    def constrain(self, u) -> ParamVector:
        u = np.asarray(u, dtype=float)
        sl, K = self.slices, self.spec.K
        pi = np.zeros((K, K))
        if K == 2:
            pi[0, 1] = pi[1, 0] = 1.0
        else:
            z = u[sl["pi"]].reshape(K, K - 2)
            for j in range(K):
                pi[j, self._others(j)] = _softmax_ref(z[j])
        lam = np.exp(u[sl["lam"]])
        rho = None
        if self.spec.has_rho:
            rho = np.full(K, np.nan)
            rho[self.nb] = np.exp(u[sl["rho"]])
        raw = u[sl["loc"]]
        loc = np.cumsum(np.concatenate([raw[:1], np.exp(raw[1:])])) if self.spec.ordered else raw
        harm = u[sl["harm"]].reshape(K, 2) if self.spec.harmonic else None
        sigma2 = np.exp(u[sl["sigma2"]])
        return ParamVector(pi=pi, lam=lam, location=loc, sigma2=sigma2, rho=rho, harmonic=harm)

    def unconstrain(self, params: ParamVector):
        sl, K = self.slices, self.spec.K
        u = np.empty(self.size)
        if K > 2:
            z = np.empty((K, K - 2))
            for j in range(K):
                row = params.pi[j, self._others(j)]
                z[j] = np.log(row[:-1]) - np.log(row[-1])
            u[sl["pi"]] = z.ravel()
        u[sl["lam"]] = np.log(params.lam)
        if self.spec.has_rho:
            u[sl["rho"]] = np.log(params.rho[self.nb])
        loc = params.location
        u[sl["loc"]] = (np.concatenate([loc[:1], np.log(np.diff(loc))]) if self.spec.ordered
                        else loc)
        if self.spec.harmonic:
            u[sl["harm"]] = params.harmonic.ravel()
        u[sl["sigma2"]] = np.log(params.sigma2)
        return u

    def log_jacobian_and_grad(self, u):
        """``log |d constrain / d u|`` and its gradient."""
        u = np.asarray(u, dtype=float)
        sl, K = self.slices, self.spec.K
        grad = np.zeros(self.size)
        total = 0.0
        if K > 2:
            z = u[sl["pi"]].reshape(K, K - 2)
            g = np.empty_like(z)
            for j in range(K):
                x = _softmax_ref(z[j])
                total += np.log(x).sum()
                g[j] = 1.0 - (K - 1) * x[:-1]
            grad[sl["pi"]] = g.ravel()
        for name in ("lam", "rho", "sigma2"):
            total += u[sl[name]].sum()
            grad[sl[name]] = 1.0
        if self.spec.ordered:
            total += u[sl["loc"]][1:].sum()
            grad[sl["loc"]][1:] = 1.0
        return float(total), grad

    def pull_back(self, u, g: ParamGradient):
        """Chain rule from a constrained gradient to unconstrained coordinates."""
        u = np.asarray(u, dtype=float)
        sl, K = self.slices, self.spec.K
        out = np.empty(self.size)
        if K > 2:
            z = u[sl["pi"]].reshape(K, K - 2)
            gz = np.empty_like(z)
            for j in range(K):
                x = _softmax_ref(z[j])
                gx = g.pi[j, self._others(j)]
                gz[j] = (x * (gx - np.dot(gx, x)))[:-1]
            out[sl["pi"]] = gz.ravel()
        lam = np.exp(u[sl["lam"]])
        out[sl["lam"]] = g.lam * lam
        if self.spec.has_rho:
            out[sl["rho"]] = g.rho[self.nb] * np.exp(u[sl["rho"]])
        raw = u[sl["loc"]]
        if self.spec.ordered:
            tail = np.cumsum(g.location[::-1])[::-1]
            out[sl["loc"]] = np.concatenate([tail[:1], tail[1:] * np.exp(raw[1:])])
        else:
            out[sl["loc"]] = g.location
        if self.spec.harmonic:
            out[sl["harm"]] = g.harmonic.ravel()
        out[sl["sigma2"]] = g.sigma2 * np.exp(u[sl["sigma2"]])
        return out

    # -- flat constrained vectors --------------------------------------------
    def flatten(self, params: ParamVector):
        K = self.spec.K
        parts = [np.concatenate([params.pi[j, self._others(j)] for j in range(K)]),
                 params.lam]
        if self.spec.has_rho:
            parts.append(params.rho[self.nb])
        parts.append(params.location)
        if self.spec.harmonic:
            parts.append(params.harmonic.ravel())
        parts.append(params.sigma2)
        return np.concatenate(parts)

    def unflatten(self, x) -> ParamVector:
        x = np.asarray(x, dtype=float)
        K = self.spec.K
        pi = np.zeros((K, K))
        pos = 0
        for j in range(K):
            pi[j, self._others(j)] = x[pos:pos + K - 1]
            pos += K - 1
        lam = x[pos:pos + K]
        pos += K
        rho = None
        if self.spec.has_rho:
            rho = np.full(K, np.nan)
            n = int(self.nb.sum())
            rho[self.nb] = x[pos:pos + n]
            pos += n
        loc = x[pos:pos + K]
        pos += K
        harm = None
        if self.spec.harmonic:
            harm = x[pos:pos + 2 * K].reshape(K, 2)
            pos += 2 * K
        sigma2 = x[pos:pos + K]
        return ParamVector(pi=pi, lam=lam, location=loc, sigma2=sigma2, rho=rho, harmonic=harm)


def _softmax_ref(z):
    """Softmax of ``(z, 0)``: a point of the simplex with the last entry as reference."""
    full = np.concatenate([z, [0.0]])
    full -= full.max()
    e = np.exp(full)
    return e / e.sum()

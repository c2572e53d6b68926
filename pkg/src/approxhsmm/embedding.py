"""Sparse expanded-state transition matrix for the dwell approximation.

State ``j`` is represented by ``a_j`` expanded states. Entering state ``j``
always lands on the first of them. From position ``r`` (1-based) the chain
either leaves with probability ``h_j(r)`` and jumps to the head of another
state ``k`` with probability ``pi[j, k]``, or advances to position ``r + 1``.
The last position loops on itself with probability ``1 - h_j(a_j)``, so the
dwell law is exact for ``r < a_j`` and has a geometric tail afterwards.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import special

from .errors import ConstructionError, NoStationaryDistributionError
from .model import (DwellFamily, ModelSpec, ParamVector, _check_dwell_args, _check_r,
                    dwell_logpmf_array, dwell_logsurvival_array)

#: Survival probabilities below this value count as exhausted: the hazard is
#: then exactly one, matching the behaviour of ``pmf / (1 - cdf)`` once the
#: complementary cdf has vanished in double precision.
SURVIVAL_FLOOR = float(np.finfo(float).eps)


def hazard(family, lam, rho=None, r=1):
    """Probability that a dwell ends at ``r`` given that it reached ``r``."""
    family = _check_dwell_args(family, lam, rho)
    r = _check_r(r)
    out = _hazard_values(family, lam, rho, r)
    return float(out) if out.ndim == 0 else out


def _hazard_values(family, lam, rho, r):
    log_pmf = dwell_logpmf_array(family, lam, rho, r)
    log_surv = dwell_logsurvival_array(family, lam, rho, r)
    exhausted = log_surv < np.log(SURVIVAL_FLOOR)
    with np.errstate(invalid="ignore", over="ignore"):
        h = np.exp(log_pmf - log_surv)
    return np.where(exhausted, 1.0, np.clip(h, 0.0, 1.0))


def _nb_logpmf_drho(k, lam, rho):
    return (special.digamma(k + rho) - special.digamma(rho) + np.log(rho) - np.log(rho + lam)
            + (lam - k) / (rho + lam))


def hazard_table(family, lam, rho, a, with_grad=False):
    """Hazards ``h(1..a)`` and optionally their derivatives.

    Returns ``h`` or ``(h, dh_dlam, dh_drho)``; ``dh_drho`` is zero unless
    the family is negative binomial.
    """
    r = np.arange(1, a + 1)
    k = r - 1.0
    log_pmf = dwell_logpmf_array(family, lam, rho, r)
    log_surv = dwell_logsurvival_array(family, lam, rho, r)
    exhausted = log_surv < np.log(SURVIVAL_FLOOR)
    with np.errstate(invalid="ignore", over="ignore"):
        h = np.exp(log_pmf - log_surv)
    h = np.where(exhausted, 1.0, np.clip(h, 0.0, 1.0))
    if not with_grad:
        return h
    dh_drho = np.zeros(a)
    if family is DwellFamily.GEOMETRIC:
        dh_dlam = np.full(a, -1.0 / (1.0 + lam) ** 2)
        return h, dh_dlam, dh_drho
    # d log P(d >= r) / d lam, from the derivative of the regularized
    # incomplete gamma/beta function with respect to its argument.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family is DwellFamily.POISSON:
            dlogpmf = np.where(k > 0, k / lam, 0.0) - 1.0
            log_dsurv = special.xlogy(k - 1.0, lam) - lam - special.gammaln(np.maximum(k, 1.0))
        else:
            x = lam / (rho + lam)
            dlogpmf = np.where(k > 0, k / lam, 0.0) - (rho + k) / (rho + lam)
            kk = np.maximum(k, 1.0)
            log_dsurv = (special.xlogy(kk - 1.0, x) + (rho - 1.0) * np.log1p(-x)
                         - special.betaln(kk, rho) + np.log(rho) - 2.0 * np.log(rho + lam))
        dlogsurv = np.where(k > 0, np.exp(log_dsurv - log_surv), 0.0)
    dh_dlam = np.where(exhausted, 0.0, h * (dlogpmf - dlogsurv))
    if family is DwellFamily.NEGBINOMIAL:
        # d/d rho of P(d >= r) = -sum_{s < r} d/d rho P(d = s)
        dlp = _nb_logpmf_drho(k, lam, rho)
        pmf = np.exp(log_pmf)
        head = np.concatenate([[0.0], np.cumsum(pmf * dlp)[:-1]])
        with np.errstate(over="ignore", invalid="ignore"):
            dlogsurv_rho = -head / np.exp(log_surv)
        dh_drho = np.where(exhausted, 0.0, h * (dlp - dlogsurv_rho))
    return h, dh_dlam, dh_drho


# ---------------------------------------------------------------------------
# Sparsity pattern

@dataclass(frozen=True, eq=False)
class PhiStructure:
    """Fixed compressed-row sparsity pattern of the expanded matrix.

    Entry ``p`` lives in row ``row[p]``. Exit entries (``is_exit``) carry
    ``pi[src, dst] * h[row]``; the others carry ``1 - h[row]``. The same
    entries in column-major order are ``col_perm[col_ptr[l]:col_ptr[l + 1]]``
    for column ``l``, with rows ascending; ``col_row`` holds those rows.

    The forward pass uses a second, banded view. A column whose entries all
    sit in rows ``l - 1`` and ``l`` is a band column; ``band_sub[l]`` and
    ``band_diag[l]`` index those two entries (``-1`` when absent, meaning a
    zero). The remaining columns ``irr_cols`` keep a compressed-column layout
    in ``irr_ptr``, ``irr_perm`` and ``irr_row``.
    """

    a: tuple
    offsets: np.ndarray
    owner: np.ndarray
    row_ptr: np.ndarray
    col_idx: np.ndarray
    row: np.ndarray
    is_exit: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    col_ptr: np.ndarray
    col_perm: np.ndarray
    col_row: np.ndarray
    band_sub: np.ndarray
    band_diag: np.ndarray
    irr_cols: np.ndarray
    irr_ptr: np.ndarray
    irr_perm: np.ndarray
    irr_row: np.ndarray

    @property
    def dim(self):
        return self.owner.shape[0]

    @property
    def nnz(self):
        return self.col_idx.shape[0]


@functools.lru_cache(maxsize=64)
def phi_structure(a):
    """Sparsity pattern for thresholds ``a`` (cached)."""
    a = tuple(int(v) for v in a)
    K = len(a)
    offsets = np.concatenate([[0], np.cumsum(a)[:-1]]).astype(np.int64)
    owner = np.repeat(np.arange(K), a).astype(np.int64)
    row_ptr = [0]
    cols, rows, exits, srcs, dsts = [], [], [], [], []
    for j in range(K):
        for r in range(a[j]):
            i = offsets[j] + r
            entries = [(i + 1 if r < a[j] - 1 else i, False, j, j)]
            entries += [(offsets[k], True, j, k) for k in range(K) if k != j]
            entries.sort(key=lambda e: e[0])
            for col, is_exit, s, d in entries:
                cols.append(col)
                rows.append(i)
                exits.append(is_exit)
                srcs.append(s)
                dsts.append(d)
            row_ptr.append(len(cols))
    arrays = dict(
        offsets=offsets, owner=owner, row_ptr=np.array(row_ptr, dtype=np.int64),
        col_idx=np.array(cols, dtype=np.int64), row=np.array(rows, dtype=np.int64),
        is_exit=np.array(exits, dtype=bool), src=np.array(srcs, dtype=np.int64),
        dst=np.array(dsts, dtype=np.int64))
    perm = np.lexsort((arrays["row"], arrays["col_idx"]))
    arrays["col_perm"] = perm.astype(np.int64)
    arrays["col_row"] = arrays["row"][perm]
    arrays["col_ptr"] = np.concatenate(
        [[0], np.cumsum(np.bincount(arrays["col_idx"], minlength=owner.size))]).astype(np.int64)
    arrays.update(_band_split(arrays["row"], arrays["col_idx"], perm, arrays["col_ptr"]))
    for v in arrays.values():
        v.setflags(write=False)
    return PhiStructure(a=a, **arrays)


def _band_split(rows, cols, perm, col_ptr):
    A = col_ptr.size - 1
    band_sub = np.full(A, -1, dtype=np.int64)
    band_diag = np.full(A, -1, dtype=np.int64)
    irregular = []
    for l in range(A):
        entries = perm[col_ptr[l]:col_ptr[l + 1]]
        if np.all((rows[entries] == l - 1) | (rows[entries] == l)):
            for p in entries:
                (band_sub if rows[p] == l - 1 else band_diag)[l] = p
        else:
            irregular.append(l)
    irr_cols = np.array(irregular, dtype=np.int64)
    irr_perm = np.concatenate([perm[col_ptr[l]:col_ptr[l + 1]] for l in irr_cols]
                              + [np.zeros(0, dtype=np.int64)]).astype(np.int64)
    counts = col_ptr[irr_cols + 1] - col_ptr[irr_cols]
    return dict(band_sub=band_sub, band_diag=band_diag, irr_cols=irr_cols,
                irr_ptr=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
                irr_perm=irr_perm, irr_row=rows[irr_perm])


# ---------------------------------------------------------------------------
# Transition matrix

@dataclass(frozen=True, eq=False)
class SparseTransitionMatrix:
    """Row-stochastic expanded transition matrix in compressed-row form."""

    structure: PhiStructure
    values: np.ndarray

    @property
    def dim(self):
        return self.structure.dim

    @property
    def row_ptr(self):
        return self.structure.row_ptr

    @property
    def col_idx(self):
        return self.structure.col_idx

    @property
    def aggregate_offsets(self):
        return self.structure.offsets

    @property
    def owner(self):
        return self.structure.owner

    @property
    def nnz(self):
        return self.structure.nnz

    def to_dense(self):
        out = np.zeros((self.dim, self.dim))
        out[self.structure.row, self.col_idx] = self.values
        return out

    def rmatvec(self, v):
        """Return ``Phi^T v``."""
        out = np.zeros(self.dim)
        np.add.at(out, self.col_idx, v[self.structure.row] * self.values)
        return out

    def matvec(self, v):
        """Return ``Phi v``."""
        return np.bincount(self.structure.row, weights=self.values * v[self.col_idx],
                           minlength=self.dim)

    def row_sums(self):
        return np.bincount(self.structure.row, weights=self.values, minlength=self.dim)

    def write_coo(self, path):
        """Write ``row col value`` lines (0-based indices)."""
        with open(path, "w") as fh:
            for r, c, v in zip(self.structure.row, self.col_idx, self.values):
                fh.write(f"{r} {c} {v!r}\n")


@dataclass(frozen=True, eq=False)
class HazardTables:
    """Flat per-expanded-state hazards (and derivatives) for one parameter set."""

    h: np.ndarray
    dh_dlam: np.ndarray | None = None
    dh_drho: np.ndarray | None = None


def hazard_tables(spec: ModelSpec, params: ParamVector, with_grad=False):
    hs, dl, dr = [], [], []
    for j, fam in enumerate(spec.dwell):
        rho = params.rho_of(j) if fam is DwellFamily.NEGBINOMIAL else None
        out = hazard_table(fam, float(params.lam[j]), rho, spec.a[j], with_grad)
        if with_grad:
            hs.append(out[0])
            dl.append(out[1])
            dr.append(out[2])
        else:
            hs.append(out)
    if with_grad:
        return HazardTables(np.concatenate(hs), np.concatenate(dl), np.concatenate(dr))
    return HazardTables(np.concatenate(hs))


def phi_values(structure: PhiStructure, pi, h):
    """Nonzero values of the expanded matrix for a hazard vector ``h``."""
    hr = h[structure.row]
    return np.where(structure.is_exit, pi[structure.src, structure.dst] * hr, 1.0 - hr)


def build_phi(spec: ModelSpec, params: ParamVector) -> SparseTransitionMatrix:
    """Assemble the expanded transition matrix for ``params``."""
    if params.K != spec.K:
        raise ConstructionError(f"parameters have {params.K} states, spec has {spec.K}")
    params.validate(spec)
    structure = phi_structure(spec.a)
    values = phi_values(structure, params.pi, hazard_tables(spec, params).h)
    values.setflags(write=False)
    return SparseTransitionMatrix(structure, values)


# ---------------------------------------------------------------------------
# Stationary distribution

@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    pi0_star: np.ndarray


def _dense_phi(phi):
    return phi.to_dense() if isinstance(phi, SparseTransitionMatrix) else np.asarray(phi, float)


def stationary_factor(dense_phi):
    """Solve for the stationary law; return it with the LU factor of ``(I - Phi + U)^T``."""
    n = dense_phi.shape[0]
    M = np.eye(n) - dense_phi + 1.0
    with warnings.catch_warnings():
        # singular factors are detected from the pivots just below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M.T, check_finite=False)
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-13 * max(diag.max(), 1.0):
        raise NoStationaryDistributionError(
            "no unique stationary distribution: the chain is reducible")
    x = scipy.linalg.lu_solve((lu, piv), np.ones(n), check_finite=False)
    x = np.where(x < 0.0, 0.0, x)
    total = x.sum()
    if not np.isfinite(total) or total <= 0:
        raise NoStationaryDistributionError("no unique stationary distribution")
    return x / total, (lu, piv)


def stationary_distribution(phi) -> StationaryDistribution:
    """Stationary law of a row-stochastic matrix (sparse or dense)."""
    x, _ = stationary_factor(_dense_phi(phi))
    x.setflags(write=False)
    return StationaryDistribution(x)

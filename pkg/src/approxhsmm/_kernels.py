"""Compiled inner loops for the message-passing and exact recursions.

Emission log densities are passed per state with shape ``(T, K)``; each time
step is shifted by its row maximum before exponentiation and the shift is
added back to the log scale. Status codes: 0 ok, ``t + 1`` when the
normalizer at time ``t`` vanished or overflowed.
"""

import numpy as np
from numba import njit

_NEG_INF = -np.inf


@njit(cache=True)
def _emission_step(log_e, t, shift_out, e_state):
    K = log_e.shape[1]
    m = _NEG_INF
    for j in range(K):
        if log_e[t, j] > m:
            m = log_e[t, j]
    for j in range(K):
        e_state[j] = np.exp(log_e[t, j] - m)
    shift_out[t] = m


@njit(cache=True)
def forward_sparse(log_e, owner, pi0, sub, diag, irr_cols, irr_ptr, irr_row, irr_vals,
                   use_max, store, alphas, log_scale, shift, norm):
    """Scaled forward pass with the transition matrix split into band and irregular parts.

    Band column ``l`` receives ``sub[l]`` from row ``l - 1`` and ``diag[l]``
    from row ``l`` (zeros where absent). Column ``irr_cols[m]`` holds rows
    ``irr_row[irr_ptr[m]:irr_ptr[m + 1]]`` (ascending) with values
    ``irr_vals`` at the same positions. Each new message entry is accumulated
    in the same order as the dense pass.
    Returns ``(status, log_likelihood)``; fills ``log_scale``, ``shift`` and
    ``norm`` and, when ``store`` is set, every scaled message into ``alphas``.
    The final scaled message is left in ``alphas[-1]`` either way.
    """
    T = log_e.shape[0]
    K = log_e.shape[1]
    A = owner.shape[0]
    e_state = np.empty(K)
    u = np.empty(A)
    prev = np.empty(A)
    total = 0.0
    for t in range(T):
        _emission_step(log_e, t, shift, e_state)
        if t == 0:
            for l in range(A):
                u[l] = pi0[l]
        else:
            u[0] = prev[0] * diag[0]
            for l in range(1, A):
                u[l] = prev[l - 1] * sub[l] + prev[l] * diag[l]
            for m in range(irr_cols.shape[0]):
                v = 0.0
                for q in range(irr_ptr[m], irr_ptr[m + 1]):
                    v += prev[irr_row[q]] * irr_vals[q]
                u[irr_cols[m]] = v
        for l in range(A):
            u[l] *= e_state[owner[l]]
        c = 0.0
        if use_max:
            for l in range(A):
                if u[l] > c:
                    c = u[l]
        else:
            for l in range(A):
                c += u[l]
        if not (c > 0.0 and c < np.inf):
            return t + 1, _NEG_INF
        inv = 1.0 / c
        r = t if store else 0
        for l in range(A):
            v = u[l] * inv
            prev[l] = v
            alphas[r, l] = v
        norm[t] = c
        log_scale[t] = np.log(c) + shift[t]
        total += log_scale[t]
    if use_max:
        s = 0.0
        for l in range(A):
            s += prev[l]
        total += np.log(s)
    last = alphas.shape[0] - 1
    for l in range(A):
        alphas[last, l] = prev[l]
    return 0, total


@njit(cache=True)
def forward_dense(log_e, owner, pi0, phi, use_max, store, alphas, log_scale, shift, norm):
    """Dense counterpart of :func:`forward_sparse` (same summation order)."""
    T = log_e.shape[0]
    K = log_e.shape[1]
    A = owner.shape[0]
    e_state = np.empty(K)
    u = np.empty(A)
    prev = np.empty(A)
    total = 0.0
    for t in range(T):
        _emission_step(log_e, t, shift, e_state)
        if t == 0:
            for l in range(A):
                u[l] = pi0[l] * e_state[owner[l]]
        else:
            for l in range(A):
                u[l] = 0.0
            for i in range(A):
                ai = prev[i]
                for l in range(A):
                    u[l] += ai * phi[i, l]
            for l in range(A):
                u[l] *= e_state[owner[l]]
        c = 0.0
        if use_max:
            for l in range(A):
                if u[l] > c:
                    c = u[l]
        else:
            for l in range(A):
                c += u[l]
        if not (c > 0.0 and c < np.inf):
            return t + 1, _NEG_INF
        inv = 1.0 / c
        for l in range(A):
            prev[l] = u[l] * inv
        row = t if store else 0
        for l in range(A):
            alphas[row, l] = prev[l]
        norm[t] = c
        log_scale[t] = np.log(c) + shift[t]
        total += log_scale[t]
    if use_max:
        s = 0.0
        for l in range(A):
            s += prev[l]
        total += np.log(s)
    last = alphas.shape[0] - 1
    for l in range(A):
        alphas[last, l] = prev[l]
    return 0, total


@njit(cache=True)
def backward_sparse(log_e, owner, shift, norm, alphas, row_ptr, col_idx, vals,
                    g_vals, g_pi0, occupancy):
    """Adjoint sweep for a sum-normalized forward pass.

    Accumulates ``d logL / d vals`` into ``g_vals``, ``d logL / d pi0`` into
    ``g_pi0`` and the smoothed state occupancy ``P(z_t = j | y)`` (which is
    also ``d logL / d log e_t(j)``) into ``occupancy``. Returns the smoothed
    expanded-state probabilities at ``t = 0``.
    """
    T = log_e.shape[0]
    K = log_e.shape[1]
    A = owner.shape[0]
    beta = np.ones(A)
    w = np.empty(A)
    nb = np.empty(A)
    e_state = np.empty(K)
    for t in range(T - 1, 0, -1):
        for l in range(A):
            occupancy[t, owner[l]] += alphas[t, l] * beta[l]
        for j in range(K):
            e_state[j] = np.exp(log_e[t, j] - shift[t])
        inv = 1.0 / norm[t]
        for l in range(A):
            w[l] = e_state[owner[l]] * beta[l] * inv
        for i in range(A):
            ai = alphas[t - 1, i]
            s = 0.0
            for p in range(row_ptr[i], row_ptr[i + 1]):
                wc = w[col_idx[p]]
                g_vals[p] += ai * wc
                s += vals[p] * wc
            nb[i] = s
        for i in range(A):
            beta[i] = nb[i]
    gamma0 = np.empty(A)
    for l in range(A):
        gamma0[l] = alphas[0, l] * beta[l]
        occupancy[0, owner[l]] += gamma0[l]
    for j in range(K):
        e_state[j] = np.exp(log_e[0, j] - shift[0])
    for l in range(A):
        g_pi0[l] += e_state[owner[l]] * beta[l] / norm[0]
    return gamma0


@njit(cache=True)
def backward_messages(log_e, owner, shift, norm, row_ptr, col_idx, vals, betas):
    """Scaled backward messages ``betas[t]`` matching a sum-normalized forward pass."""
    T = log_e.shape[0]
    K = log_e.shape[1]
    A = owner.shape[0]
    e_state = np.empty(K)
    w = np.empty(A)
    for l in range(A):
        betas[T - 1, l] = 1.0
    for t in range(T - 1, 0, -1):
        for j in range(K):
            e_state[j] = np.exp(log_e[t, j] - shift[t])
        inv = 1.0 / norm[t]
        for l in range(A):
            w[l] = e_state[owner[l]] * betas[t, l] * inv
        for i in range(A):
            s = 0.0
            for p in range(row_ptr[i], row_ptr[i + 1]):
                s += vals[p] * w[col_idx[p]]
            betas[t - 1, i] = s


@njit(cache=True)
def viterbi_sparse(log_e, owner, log_pi0, row_ptr, col_idx, log_vals):
    """Max-product recursion; ties go to the lowest expanded index."""
    T = log_e.shape[0]
    A = owner.shape[0]
    delta = np.empty(A)
    nd = np.empty(A)
    back = np.zeros((T, A), dtype=np.int64)
    for l in range(A):
        delta[l] = log_pi0[l] + log_e[0, owner[l]]
    for t in range(1, T):
        for l in range(A):
            nd[l] = _NEG_INF
            back[t, l] = -1
        for i in range(A):
            di = delta[i]
            for p in range(row_ptr[i], row_ptr[i + 1]):
                c = col_idx[p]
                v = di + log_vals[p]
                if back[t, c] < 0 or v > nd[c]:
                    nd[c] = v
                    back[t, c] = i
        for l in range(A):
            delta[l] = nd[l] + log_e[t, owner[l]]
    best = 0
    for l in range(1, A):
        if delta[l] > delta[best]:
            best = l
    score = delta[best]
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = best
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, score


@njit(cache=True)
def _lse_add(acc, v):
    if v == _NEG_INF:
        return acc
    if acc == _NEG_INF:
        return v
    if acc > v:
        return acc + np.log1p(np.exp(v - acc))
    return v + np.log1p(np.exp(acc - v))


@njit(cache=True)
def exact_hsmm(log_e, log_pmf, log_surv, log_pi, log_init):
    """Exact semi-Markov forward recursion in log space.

    ``log_pmf[j, d - 1]`` and ``log_surv[j, d - 1]`` hold ``log P(d_j = d)``
    and ``log P(d_j >= d)`` for ``d = 1..D``. ``log_init[j, r - 1]`` is the
    log probability that the first observation sits at position ``r`` of a
    dwell in state ``j``; ``r = 1`` is a fresh start and larger ``r`` a dwell
    already running, whose remaining length follows from conditioning on
    ``d_j >= r``.
    """
    T = log_e.shape[0]
    K = log_e.shape[1]
    D = log_pmf.shape[1]
    R = log_init.shape[1]
    cum = np.zeros((T + 1, K))
    for t in range(T):
        for j in range(K):
            cum[t + 1, j] = cum[t, j] + log_e[t, j]
    # start[t, j]: log P(y_1..y_t, a new dwell in j starts at t + 1), t >= 1
    start = np.full((T + 1, K), _NEG_INF)
    ends = np.empty(K)
    for t in range(1, T + 1):
        for j in range(K):
            acc = _NEG_INF
            # first segment
            for r in range(1, R + 1):
                lr = log_init[j, r - 1]
                if lr == _NEG_INF:
                    continue
                d = r - 1 + t
                if d > D:
                    break
                acc = _lse_add(acc, lr + log_pmf[j, d - 1] - log_surv[j, r - 1] + cum[t, j])
            # later segments
            dmax = min(t - 1, D)
            for d in range(1, dmax + 1):
                s = start[t - d, j]
                if s == _NEG_INF:
                    continue
                acc = _lse_add(acc, s + log_pmf[j, d - 1] + cum[t, j] - cum[t - d, j])
            ends[j] = acc
        if t < T:
            for k in range(K):
                acc = _NEG_INF
                for j in range(K):
                    acc = _lse_add(acc, ends[j] + log_pi[j, k])
                start[t, k] = acc
    # right-censored final segment
    total = _NEG_INF
    for j in range(K):
        for r in range(1, R + 1):
            lr = log_init[j, r - 1]
            if lr == _NEG_INF:
                continue
            d = r - 1 + T
            if d > D:
                break
            total = _lse_add(total, lr + log_surv[j, d - 1] - log_surv[j, r - 1] + cum[T, j])
        dmax = min(T - 1, D)
        for d in range(1, dmax + 1):
            s = start[T - d, j]
            if s == _NEG_INF:
                continue
            total = _lse_add(total, s + log_surv[j, d - 1] + cum[T, j] - cum[T - d, j])
    return total


@njit(cache=True)
def propagate_marginals(xi, row_ptr, col_idx, vals, owner, K, H):
    """Owner marginals of ``xi' Phi^h`` for ``h = 1..H`` by repeated sparse products."""
    A = xi.shape[0]
    v = xi.copy()
    nv = np.empty(A)
    out = np.zeros((H, K))
    for h in range(H):
        for l in range(A):
            nv[l] = 0.0
        for i in range(A):
            vi = v[i]
            if vi != 0.0:
                for p in range(row_ptr[i], row_ptr[i + 1]):
                    nv[col_idx[p]] += vi * vals[p]
        for l in range(A):
            v[l] = nv[l]
            out[h, owner[l]] += nv[l]
    return out

"""numba kernels. Loops run in ascending index order so results are reproducible."""

import math

import numpy as np
from numba import njit

SEMI_HARD = 0
HARD = 1


@njit(cache=True)
def _sigmoid(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


@njit(cache=True)
def token_tables(E, Wa, Wg, window):
    """T[j, t, c]: contribution of token t at window offset j to channel c."""
    C = Wa.shape[0]
    V, D = E.shape
    Ta = np.zeros((window, V, C), dtype=np.float64)
    Tg = np.zeros((window, V, C), dtype=np.float64)
    for j in range(window):
        for t in range(V):
            for c in range(C):
                sa = 0.0
                sg = 0.0
                for d in range(D):
                    sa += E[t, d] * Wa[c, j * D + d]
                    sg += E[t, d] * Wg[c, j * D + d]
                Ta[j, t, c] = sa
                Tg[j, t, c] = sg
    return Ta, Tg


@njit(cache=True)
def gated_pool_forward(tokens, Ta, Tg, ba, bg, window):
    C = Ta.shape[2]
    n_win = tokens.shape[0] // window
    pooled = np.empty(C, dtype=np.float64)
    win = np.zeros(C, dtype=np.int64)
    a_win = np.empty(C, dtype=np.float64)
    g_win = np.empty(C, dtype=np.float64)
    a = np.empty(C, dtype=np.float64)
    g = np.empty(C, dtype=np.float64)
    for p in range(n_win):
        a[:] = 0.0
        g[:] = 0.0
        for j in range(window):
            t = tokens[p * window + j]
            for c in range(C):
                a[c] += Ta[j, t, c]
                g[c] += Tg[j, t, c]
        for c in range(C):
            a[c] += ba[c]
            g[c] += bg[c]
            h = a[c] * _sigmoid(g[c])
            # strict > keeps the lowest window on ties
            if p == 0 or h > pooled[c]:
                pooled[c] = h
                win[c] = p
                a_win[c] = a[c]
                g_win[c] = g[c]
    return pooled, win, a_win, g_win


@njit(cache=True)
def gated_pool_backward(tokens, win, a_win, g_win, dpooled, E, Wa, Wg, window,
                        dE, dWa, dba, dWg, dbg):
    C = Wa.shape[0]
    D = E.shape[1]
    for c in range(C):
        s = _sigmoid(g_win[c])
        da = dpooled[c] * s
        dg = dpooled[c] * a_win[c] * s * (1.0 - s)
        dba[c] += da
        dbg[c] += dg
        p = win[c]
        for j in range(window):
            t = tokens[p * window + j]
            for d in range(D):
                m = j * D + d
                xv = E[t, d]
                dWa[c, m] += da * xv
                dWg[c, m] += dg * xv
                dE[t, d] += Wa[c, m] * da + Wg[c, m] * dg


@njit(cache=True)
def mine_triplets(dist, labels, alpha):
    n = dist.shape[0]
    anchors = np.empty(n, dtype=np.int64)
    positives = np.empty(n, dtype=np.int64)
    negatives = np.empty(n, dtype=np.int64)
    cats = np.empty(n, dtype=np.int64)
    m = 0
    for a in range(n):
        p = a ^ 1
        dap = dist[a, p]
        upper = dap + alpha
        best_semi = -1
        best_hard = -1
        for j in range(n):
            if labels[j] == labels[a]:
                continue
            d = dist[a, j]
            if d >= dap and d < upper:
                if best_semi < 0 or d < dist[a, best_semi]:
                    best_semi = j
            elif d < dap:
                if best_hard < 0 or d > dist[a, best_hard]:
                    best_hard = j
        if best_semi >= 0:
            negatives[m] = best_semi
            cats[m] = SEMI_HARD
        elif best_hard >= 0:
            negatives[m] = best_hard
            cats[m] = HARD
        else:
            continue
        anchors[m] = a
        positives[m] = p
        m += 1
    return anchors[:m], positives[:m], negatives[:m], cats[:m]


@njit(cache=True)
def cosine_distances_to(normed, q):
    n, dim = normed.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for k in range(dim):
            s += normed[i, k] * q[k]
        out[i] = 1.0 - s
    return out


@njit(cache=True)
def exact_knn_all(normed, k):
    n = normed.shape[0]
    if k > n - 1:
        k = n - 1
    out_idx = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        d = cosine_distances_to(normed, normed[i])
        m = 0
        # insertion into a sorted buffer keyed by (distance, position)
        for j in range(n):
            if j == i:
                continue
            dj = d[j]
            if m == k and not dj < out_d[i, k - 1]:
                continue
            pos = m if m < k else k - 1
            while pos > 0 and dj < out_d[i, pos - 1]:
                if pos < k:
                    out_d[i, pos] = out_d[i, pos - 1]
                    out_idx[i, pos] = out_idx[i, pos - 1]
                pos -= 1
            out_d[i, pos] = dj
            out_idx[i, pos] = j
            if m < k:
                m += 1
    return out_idx, out_d


@njit(cache=True)
def first_correct_rank_all(normed, labels):
    n = normed.shape[0]
    ranks = np.zeros(n, dtype=np.int64)
    for i in range(n):
        d = cosine_distances_to(normed, normed[i])
        best = -1
        for j in range(n):
            if j != i and labels[j] == labels[i]:
                if best < 0 or d[j] < d[best]:
                    best = j
        if best < 0:
            continue
        db = d[best]
        r = 1
        for j in range(n):
            if j == i:
                continue
            if d[j] < db or (d[j] == db and j < best):
                r += 1
        ranks[i] = r
    return ranks

"""Vectorized numpy reference kernels."""

import numpy as np

SEMI_HARD = 0
HARD = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def token_tables(E, Wa, Wg, window):
    """T[j, t, c]: contribution of token t at window offset j to channel c."""
    C = Wa.shape[0]
    D = E.shape[1]
    Ta = np.einsum("td,cjd->jtc", E, Wa.reshape(C, window, D))
    Tg = np.einsum("td,cjd->jtc", E, Wg.reshape(C, window, D))
    return np.ascontiguousarray(Ta), np.ascontiguousarray(Tg)


def gated_pool_forward(tokens, Ta, Tg, ba, bg, window):
    toks = tokens.reshape(-1, window)
    offs = np.arange(window)
    A = ba + Ta[offs, toks].sum(axis=1)
    G = bg + Tg[offs, toks].sum(axis=1)
    H = A * _sigmoid(G)
    win = np.argmax(H, axis=0)  # first maximum on ties
    cols = np.arange(H.shape[1])
    return H[win, cols], win.astype(np.int64), A[win, cols], G[win, cols]


def gated_pool_backward(tokens, win, a_win, g_win, dpooled, E, Wa, Wg, window,
                        dE, dWa, dba, dWg, dbg):
    s = _sigmoid(g_win)
    da = dpooled * s
    dg = dpooled * a_win * s * (1.0 - s)
    dba += da
    dbg += dg
    tok_win = tokens.reshape(-1, window)[win]  # (C, window)
    Xw = E[tok_win].reshape(len(win), -1)
    dWa += da[:, None] * Xw
    dWg += dg[:, None] * Xw
    dX = (Wa * da[:, None] + Wg * dg[:, None]).reshape(len(win), window, -1)
    np.add.at(dE, tok_win, dX)


def mine_triplets(dist, labels, alpha):
    n = dist.shape[0]
    idx = np.arange(n)
    pos = idx ^ 1
    dap = dist[idx, pos]
    neg = labels[:, None] != labels[None, :]
    upper = (dap + alpha)[:, None]
    semi = neg & (dist >= dap[:, None]) & (dist < upper)
    hard = neg & (dist < dap[:, None])
    has_semi = semi.any(axis=1)
    has_hard = hard.any(axis=1)
    j_semi = np.argmin(np.where(semi, dist, np.inf), axis=1)
    j_hard = np.argmax(np.where(hard, dist, -np.inf), axis=1)
    keep = has_semi | has_hard
    anchors = idx[keep]
    negs = np.where(has_semi, j_semi, j_hard)[keep]
    cats = np.where(has_semi, SEMI_HARD, HARD)[keep]
    return anchors.astype(np.int64), pos[keep].astype(np.int64), negs.astype(np.int64), cats.astype(np.int64)


def cosine_distances_to(normed, q):
    # accumulate components in ascending order, matching the numba loop bit for bit
    s = np.zeros(normed.shape[0])
    for k in range(normed.shape[1]):
        s += normed[:, k] * q[k]
    return 1.0 - s


def exact_knn_all(normed, k):
    n = normed.shape[0]
    k = min(k, n - 1)
    out_idx = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        d = cosine_distances_to(normed, normed[i])
        d[i] = np.inf
        order = np.argsort(d, kind="stable")[:k]
        out_idx[i] = order
        out_d[i] = d[order]
    return out_idx, out_d


def first_correct_rank_all(normed, labels):
    n = normed.shape[0]
    ranks = np.zeros(n, dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        d = cosine_distances_to(normed, normed[i])
        ok = labels == labels[i]
        ok[i] = False
        if not ok.any():
            continue
        cand = np.where(ok, d, np.inf)
        j = int(np.argmin(cand))
        dj = d[j]
        before = (d < dj) | ((d == dj) & (idx < j))
        before[i] = False
        ranks[i] = 1 + int(before.sum())
    return ranks

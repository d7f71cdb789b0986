"""Slow, literal reference implementations used only to cross-check the package."""

from __future__ import annotations

import numpy as np

PAD = 256


def ref_tokens(data: bytes, window: int, max_len: int) -> list[int]:
    toks = list(data[:max_len])
    while len(toks) % window:
        toks.append(PAD)
    return toks


def ref_forward(p, data: bytes, window: int = 8, max_len: int = 16384) -> np.ndarray:
    """Forward pass written directly from the layer definitions, without the package kernels."""
    E = np.asarray(p.E, np.float64)
    toks = np.array(ref_tokens(data, window, max_len)).reshape(-1, window)
    x = E[toks]  # (T, w, D)
    a = np.einsum("cwd,twd->tc", np.asarray(p.W_a, np.float64), x) + p.b_a
    g = np.einsum("cwd,twd->tc", np.asarray(p.W_g, np.float64), x) + p.b_g
    pooled = (a / (1.0 + np.exp(-g))).max(axis=0)
    return np.asarray(p.W_fc, np.float64) @ pooled + p.b_fc


def ref_cosine(u, v, eps=1e-12) -> float:
    return 1.0 - float(u @ v) / ((np.linalg.norm(u) + eps) * (np.linalg.norm(v) + eps))


def ref_loss(p, inputs, triplets, margin, window=8) -> float:
    embs = [ref_forward(p, x, window) for x in inputs]
    if not triplets:
        return 0.0
    total = 0.0
    for a, pos, n in triplets:
        total += max(ref_cosine(embs[a], embs[pos]) - ref_cosine(embs[a], embs[n]) + margin, 0.0)
    return total / len(triplets)


def fd_grad(p, inputs, triplets, margin, h=1e-5, window=8):
    """Central differences of ``ref_loss`` for every parameter, as a flat vector."""
    from refuse.model import ModelParameters

    base = [np.array(t, dtype=np.float64) for t in p.tensors()]
    out = []
    for ti, t in enumerate(base):
        flat = t.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = ref_loss(ModelParameters(*base), inputs, triplets, margin, window)
            flat[j] = orig - h
            lm = ref_loss(ModelParameters(*base), inputs, triplets, margin, window)
            flat[j] = orig
            out.append((lp - lm) / (2 * h))
    return np.array(out)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def brute_mine(dist, labels, alpha):
    """Score every (anchor, pair partner, negative) and apply the selection rule literally."""
    out = []
    n = len(labels)
    for a in range(n):
        p = a ^ 1
        d_ap = dist[a][p]
        semi, hard = [], []
        for neg in range(n):
            if labels[neg] == labels[a]:
                continue
            d_an = dist[a][neg]
            if d_ap <= d_an < d_ap + alpha:
                semi.append((d_an, neg))
            elif d_an < d_ap:
                hard.append((d_an, neg))
        if semi:
            best = min(semi)  # smallest d_an, then lowest index
            out.append((a, p, best[1], 0))
        elif hard:
            top = max(d for d, _ in hard)
            out.append((a, p, min(j for d, j in hard if d == top), 1))
    return out


def _unit_rows(X, eps):
    sq = np.zeros(len(X))
    for k in range(X.shape[1]):
        sq += X[:, k] * X[:, k]
    return X / (np.sqrt(sq) + eps)[:, None]


def brute_distances(vectors, eps=1e-12):
    """Full cosine distance matrix; dot products summed in ascending component order."""
    X = np.asarray(vectors, np.float64)
    unit = _unit_rows(X, eps)
    dots = np.zeros((len(X), len(X)))
    for k in range(X.shape[1]):
        dots += np.outer(unit[:, k], unit[:, k])
    return 1.0 - dots


def brute_knn(vectors, k, eps=1e-12):
    """Quadratic scan ordered by (distance, position), self excluded."""
    d = brute_distances(vectors, eps)
    n = len(d)
    pos = np.arange(n)
    res = []
    for i in range(n):
        order = [j for j in np.lexsort((pos, d[i])) if j != i]
        res.append([int(j) for j in order[:k]])
    return res


def brute_first_rank(vectors, labels, eps=1e-12):
    """Position of the first same-label item in the full ordering, or 0."""
    d = brute_distances(vectors, eps)
    labels = np.asarray(labels)
    n = len(d)
    pos = np.arange(n)
    ranks = []
    for i in range(n):
        order = np.lexsort((pos, d[i]))
        order = order[order != i]
        hit = np.flatnonzero(labels[order] == labels[i])
        ranks.append(int(hit[0]) + 1 if len(hit) else 0)
    return ranks

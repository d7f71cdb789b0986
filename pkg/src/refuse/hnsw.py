"""Hierarchical navigable small-world graph over unit-normalized vectors.

The graph lives in flat integer arrays so the same functions run under
``numba.njit`` or, with numba disabled, as plain Python (slow; meant for
small inputs and cross-checks). Distances are ``1 - dot`` on rows that the
caller has already normalized.

Neighbor lists are chosen with the diversity heuristic of Malkov and
Yashunin (2018). Layer 0 holds up to ``2 * m`` links per node, upper layers
up to ``m``.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from ._kernels import jit


@jit
def _dist(data, a, q):
    s = 0.0
    for k in range(data.shape[1]):
        s += data[a, k] * q[k]
    return 1.0 - s


@jit
def _neighbors(layer, node, nbr0, cnt0, nbrU, cntU):
    if layer == 0:
        return nbr0[node, : cnt0[node]]
    return nbrU[node, layer - 1, : cntU[node, layer - 1]]


@jit
def _search_layer(data, q, entry, ef, layer, nbr0, cnt0, nbrU, cntU, visited, tag):
    cand = [(0.0, 0)]
    cand.pop()
    res = [(0.0, 0)]
    res.pop()
    for e in entry:
        if visited[e] == tag:
            continue
        visited[e] = tag
        d = _dist(data, e, q)
        heapq.heappush(cand, (d, e))
        heapq.heappush(res, (-d, -e))
        if len(res) > ef:
            heapq.heappop(res)
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        if len(res) >= ef and d > -res[0][0]:
            break
        for e in _neighbors(layer, c, nbr0, cnt0, nbrU, cntU):
            if visited[e] == tag:
                continue
            visited[e] = tag
            de = _dist(data, e, q)
            if len(res) < ef or de < -res[0][0]:
                heapq.heappush(cand, (de, e))
                heapq.heappush(res, (-de, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    m = len(res)
    ids = np.empty(m, dtype=np.int64)
    ds = np.empty(m, dtype=np.float64)
    for t in range(m - 1, -1, -1):
        nd, ne = heapq.heappop(res)
        ids[t] = -ne
        ds[t] = -nd
    return ids, ds


@jit
def _select(data, ids, ds, m):
    """Keep a candidate only if it is closer to the query than to every kept one."""
    sel = np.empty(m, dtype=np.int64)
    ns = 0
    for t in range(ids.shape[0]):
        if ns >= m:
            break
        e = ids[t]
        good = True
        for s in range(ns):
            if _dist(data, e, data[sel[s]]) < ds[t]:
                good = False
                break
        if good:
            sel[ns] = e
            ns += 1
    return sel[:ns]


@jit
def _set_links(layer, node, links, nbr0, cnt0, nbrU, cntU):
    n = links.shape[0]
    if layer == 0:
        nbr0[node, :n] = links
        cnt0[node] = n
    else:
        nbrU[node, layer - 1, :n] = links
        cntU[node, layer - 1] = n


@jit
def _connect(data, e, new, layer, mmax, nbr0, cnt0, nbrU, cntU):
    cur = _neighbors(layer, e, nbr0, cnt0, nbrU, cntU)
    n = cur.shape[0]
    if n < mmax:
        if layer == 0:
            nbr0[e, n] = new
            cnt0[e] = n + 1
        else:
            nbrU[e, layer - 1, n] = new
            cntU[e, layer - 1] = n + 1
        return
    cands = np.empty(n + 1, dtype=np.int64)
    cands[:n] = cur
    cands[n] = new
    cands = np.sort(cands)
    cd = np.empty(n + 1, dtype=np.float64)
    for t in range(n + 1):
        cd[t] = _dist(data, cands[t], data[e])
    order = np.argsort(cd, kind="mergesort")
    _set_links(layer, e, _select(data, cands[order], cd[order], mmax), nbr0, cnt0, nbrU, cntU)


@jit
def _build(data, levels, m, ef_construction):
    n = data.shape[0]
    m0 = 2 * m
    top = 1
    for i in range(n):
        if levels[i] > top:
            top = levels[i]
    nbr0 = np.full((n, m0), -1, dtype=np.int64)
    cnt0 = np.zeros(n, dtype=np.int64)
    nbrU = np.full((n, top, m), -1, dtype=np.int64)
    cntU = np.zeros((n, top), dtype=np.int64)
    visited = np.zeros(n, dtype=np.int64)
    tag = 0
    entry = 0
    max_level = levels[0]
    for i in range(1, n):
        q = data[i]
        li = levels[i]
        ep = np.array([entry], dtype=np.int64)
        for layer in range(max_level, li, -1):
            tag += 1
            ids, _ = _search_layer(data, q, ep, 1, layer, nbr0, cnt0, nbrU, cntU, visited, tag)
            ep = ids[:1]
        for layer in range(min(li, max_level), -1, -1):
            tag += 1
            ids, ds = _search_layer(data, q, ep, ef_construction, layer, nbr0, cnt0, nbrU, cntU, visited, tag)
            mmax = m0 if layer == 0 else m
            sel = _select(data, ids, ds, m)
            _set_links(layer, i, sel, nbr0, cnt0, nbrU, cntU)
            for e in sel:
                _connect(data, e, i, layer, mmax, nbr0, cnt0, nbrU, cntU)
            ep = ids
        if li > max_level:
            entry = i
            max_level = li
    return nbr0, cnt0, nbrU, cntU, entry, max_level


@jit
def _query(data, q, exclude, k, ef, entry, max_level, nbr0, cnt0, nbrU, cntU, visited, tag):
    ep = np.array([entry], dtype=np.int64)
    for layer in range(max_level, 0, -1):
        tag += 1
        ids, _ = _search_layer(data, q, ep, 1, layer, nbr0, cnt0, nbrU, cntU, visited, tag)
        ep = ids[:1]
    tag += 1
    width = ef if ef > k + 1 else k + 1
    ids, ds = _search_layer(data, q, ep, width, 0, nbr0, cnt0, nbrU, cntU, visited, tag)
    out_i = np.empty(k, dtype=np.int64)
    out_d = np.empty(k, dtype=np.float64)
    m = 0
    for t in range(ids.shape[0]):
        if ids[t] == exclude:
            continue
        if m == k:
            break
        out_i[m] = ids[t]
        out_d[m] = ds[t]
        m += 1
    return out_i[:m], out_d[:m], tag


@jit
def _query_all(data, k, ef, entry, max_level, nbr0, cnt0, nbrU, cntU):
    n = data.shape[0]
    out_i = np.full((n, k), -1, dtype=np.int64)
    out_d = np.full((n, k), np.inf, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    visited = np.zeros(n, dtype=np.int64)
    tag = 0
    for i in range(n):
        ids, ds, tag = _query(data, data[i], i, k, ef, entry, max_level, nbr0, cnt0, nbrU, cntU, visited, tag)
        c = ids.shape[0]
        out_i[i, :c] = ids
        out_d[i, :c] = ds
        counts[i] = c
    return out_i, out_d, counts


def draw_levels(n: int, m: int, seed: int) -> np.ndarray:
    """Geometric layer assignment with normalization 1/ln(m)."""
    rng = np.random.default_rng(seed)
    ml = 1.0 / math.log(max(m, 2))
    u = 1.0 - rng.random(n)  # (0, 1]
    return np.minimum(np.floor(-np.log(u) * ml), 16).astype(np.int64)


class HNSWGraph:
    def __init__(self, normed: np.ndarray, m: int = 32, ef_construction: int = 200, seed: int = 0):
        if m < 1 or ef_construction < 1:
            raise ValueError("HNSW parameters must be >= 1")
        self.data = np.ascontiguousarray(normed, dtype=np.float64)
        self.m = m
        self.ef_construction = ef_construction
        self.levels = draw_levels(len(self.data), m, seed)
        (self.nbr0, self.cnt0, self.nbrU, self.cntU,
         self.entry, self.max_level) = _build(self.data, self.levels, m, max(ef_construction, m))

    def search(self, q: np.ndarray, k: int, ef: int, exclude: int = -1):
        visited = np.zeros(len(self.data), dtype=np.int64)
        ids, ds, _ = _query(self.data, np.ascontiguousarray(q, dtype=np.float64), exclude, k, ef,
                            self.entry, self.max_level, self.nbr0, self.cnt0, self.nbrU, self.cntU,
                            visited, 0)
        return ids, ds

    def search_all(self, k: int, ef: int):
        """k nearest other members for every member, self excluded."""
        return _query_all(self.data, k, ef, self.entry, self.max_level,
                          self.nbr0, self.cnt0, self.nbrU, self.cntU)

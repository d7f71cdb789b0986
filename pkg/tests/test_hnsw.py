import numpy as np
import pytest

from refuse.hnsw import HNSWGraph, draw_levels
from refuse.retrieval import Embeddings, ExactIndex, HNSWIndex, IndexConfig, build_index, evaluate, normalize_rows


def _recall(approx, exact):
    hits = sum(len(set(a) & set(e)) for a, e in zip(approx, exact))
    return hits / sum(len(e) for e in exact)


def test_recall_on_thousand_vectors():
    x = np.random.default_rng(0).normal(size=(1000, 32))
    ids = [str(i) for i in range(1000)]
    exact = ExactIndex(ids, x).knn_all(30)[0]
    approx = build_index(Embeddings(ids, x), IndexConfig(kind="ApproxHNSW")).knn_all(30)[0]
    assert _recall(approx.tolist(), exact.tolist()) >= 0.95


def test_neighbors_sorted_and_self_excluded():
    x = np.random.default_rng(1).normal(size=(300, 8))
    idx = HNSWIndex([f"v{i}" for i in range(300)], x, IndexConfig(kind="ApproxHNSW", hnsw_m=8))
    pos, dist, counts = idx.knn_all(10)
    assert (counts == 10).all()
    for i in range(300):
        assert i not in pos[i]
        assert np.all(np.diff(dist[i]) >= 0)
    res = idx.knn("v5", 4)
    assert len(res) == 4 and "v5" not in [r for r, _ in res]


def test_tiny_graphs():
    for n in (1, 2, 3):
        g = HNSWGraph(normalize_rows(np.eye(3)[:n] + 0.1), m=2, ef_construction=4)
        idx, _, counts = g.search_all(5, 8)
        assert counts.tolist() == [n - 1] * n


def test_levels_deterministic_and_geometric():
    a = draw_levels(20000, 32, seed=4)
    assert np.array_equal(a, draw_levels(20000, 32, seed=4))
    # P(level >= 1) = 1/m
    assert abs((a >= 1).mean() - 1 / 32) < 0.005


def test_bounds_bracket_exact_on_hnsw():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(600, 16))
    ids = [f"i{n}" for n in range(600)]
    labels = {i: int(rng.integers(0, 200)) for i in ids}
    ex = evaluate(Embeddings(ids, x), labels, IndexConfig(kind="Exact"))
    ap = evaluate(Embeddings(ids, x), labels, IndexConfig(kind="ApproxHNSW"))
    assert ap.mrr_exact is None
    assert ap.mrr_lower <= ex.mrr_exact <= ap.mrr_upper


def test_invalid_params():
    with pytest.raises(ValueError):
        HNSWGraph(np.eye(2), m=0)

"""Nearest-neighbor indexes, MRR bounds, recall@k and pool-size diagnostics."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, LabelError, NotFoundError, PoolError, RefuseError, SchemaError
from .hnsw import HNSWGraph
from .model import EPS, ModelConfig, ModelParameters, forward_batch

EXACT = "Exact"
HNSW = "ApproxHNSW"
AUTO_EXACT_LIMIT = 100_000
RECALL_AT = (1, 2, 5, 10)
REPORT_SCHEMA_VERSION = 1
EMBEDDINGS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class IndexConfig:
    kind: str | None = None  # None: Exact below AUTO_EXACT_LIMIT vectors, HNSW above
    k: int = 30
    hnsw_m: int = 32
    hnsw_ef_construction: int = 200
    hnsw_ef_search: int = 128
    metric: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (None, EXACT, HNSW):
            raise ValueError(f"index kind must be {EXACT!r} or {HNSW!r}, got {self.kind!r}")
        if self.k < 1 or min(self.hnsw_m, self.hnsw_ef_construction, self.hnsw_ef_search) < 1:
            raise ValueError("k and HNSW parameters must be >= 1")
        if self.metric != "cosine":
            raise ValueError("only the cosine metric is supported")

    def resolve(self, n: int) -> str:
        if self.kind is not None:
            return self.kind
        return EXACT if n < AUTO_EXACT_LIMIT else HNSW

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Embeddings:
    ids: list[str]
    vectors: np.ndarray
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise DimensionError(
                f"{len(self.ids)} ids but vectors have shape {self.vectors.shape}"
            )

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[float]]) -> "Embeddings":
        ids = list(mapping)
        vecs = [np.asarray(mapping[i], dtype=np.float64) for i in ids]
        if len({v.shape for v in vecs}) > 1:
            raise DimensionError("embedding vectors differ in dimension")
        return cls(ids, np.stack(vecs) if vecs else np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _as_embeddings(obj) -> Embeddings:
    if isinstance(obj, Embeddings):
        return obj
    if isinstance(obj, Mapping):
        return Embeddings.from_mapping(obj)
    ids, vecs = obj
    return Embeddings(list(ids), vecs)


def normalize_rows(vectors: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Rows scaled by 1/(norm + eps); squares summed in ascending component order."""
    v = np.asarray(vectors, dtype=np.float64)
    sq = np.zeros(v.shape[0])
    for k in range(v.shape[1] if v.ndim == 2 else 0):
        sq += v[:, k] * v[:, k]
    return np.ascontiguousarray(v / (np.sqrt(sq)[:, None] + eps))


class EmbeddingIndex:
    """Immutable k-NN index. Neighbor lists exclude the query, sorted by
    (cosine distance, insertion position)."""

    kind: str

    def __init__(self, ids: Sequence[str], vectors: np.ndarray):
        self.ids = list(ids)
        self._pos = {i: p for p, i in enumerate(self.ids)}
        if len(self._pos) != len(self.ids):
            raise ValueError("index ids must be unique")
        self.normed = normalize_rows(vectors)
        self.normed.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, qid: str) -> int:
        try:
            return self._pos[qid]
        except KeyError:
            raise NotFoundError(f"id {qid!r} is not in the index") from None

    def knn(self, qid: str, k: int) -> list[tuple[str, float]]:
        idx, dist = self._knn_positions(self.position(qid), k)
        return [(self.ids[j], float(d)) for j, d in zip(idx, dist)]

    def knn_all(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Positions and distances of each member's neighbors, plus per-row counts."""
        raise NotImplementedError

    def _knn_positions(self, qpos: int, k: int):
        raise NotImplementedError


def _resort(idx: np.ndarray, dist: np.ndarray):
    order = np.lexsort((idx, dist))
    return idx[order], dist[order]


class ExactIndex(EmbeddingIndex):
    kind = EXACT

    def _knn_positions(self, qpos, k):
        d = _kernels.cosine_distances_to(self.normed, self.normed[qpos])
        d[qpos] = np.inf
        k = min(k, len(self) - 1)
        order = np.argsort(d, kind="stable")[:k]
        return order, d[order]

    def knn_all(self, k):
        k = min(k, len(self) - 1)
        if k <= 0:
            n = len(self)
            return np.zeros((n, 0), np.int64), np.zeros((n, 0)), np.zeros(n, np.int64)
        idx, dist = _kernels.exact_knn_all(self.normed, k)
        return idx, dist, np.full(len(self), k, dtype=np.int64)

    def first_correct_ranks(self, labels: np.ndarray) -> np.ndarray:
        """Unbounded rank of the first same-label item for every query (0 = none exists)."""
        return _kernels.first_correct_rank_all(self.normed, np.asarray(labels, dtype=np.int64))


class HNSWIndex(EmbeddingIndex):
    kind = HNSW

    def __init__(self, ids, vectors, config: IndexConfig):
        super().__init__(ids, vectors)
        self.config = config
        self.graph = HNSWGraph(self.normed, config.hnsw_m, config.hnsw_ef_construction, config.seed)

    def _knn_positions(self, qpos, k):
        k = min(k, len(self) - 1)
        if k <= 0:
            return np.zeros(0, np.int64), np.zeros(0)
        idx, _ = self.graph.search(self.normed[qpos], k, self.config.hnsw_ef_search, exclude=qpos)
        d = _kernels.cosine_distances_to(self.normed[idx], self.normed[qpos])
        return _resort(idx, d)

    def knn_all(self, k):
        k = min(k, len(self) - 1)
        n = len(self)
        if k <= 0:
            return np.zeros((n, 0), np.int64), np.zeros((n, 0)), np.zeros(n, np.int64)
        idx, dist, counts = self.graph.search_all(k, self.config.hnsw_ef_search)
        for i in range(n):
            c = counts[i]
            idx[i, :c], dist[i, :c] = _resort(idx[i, :c], dist[i, :c])
        return idx, dist, counts


def build_index(embeddings, config: IndexConfig | None = None) -> EmbeddingIndex:
    config = config or IndexConfig()
    emb = _as_embeddings(embeddings)
    if len(emb) == 0:
        raise ValueError("cannot index zero vectors")
    if config.resolve(len(emb)) == EXACT:
        return ExactIndex(emb.ids, emb.vectors)
    return HNSWIndex(emb.ids, emb.vectors, config)


@dataclass
class QueryOutcome:
    query_id: str
    neighbors: list[tuple[str, float]]
    rank: int | None


def reciprocal_rank_bounds(outcome: QueryOutcome | int | None, k: int) -> tuple[float, float]:
    """(lower, upper) reciprocal rank when only ``k`` neighbors were retrieved."""
    rank = outcome.rank if isinstance(outcome, QueryOutcome) else outcome
    if rank is None:
        return 0.0, 1.0 / (k + 1)
    return 1.0 / rank, 1.0 / rank


def _label_array(ids: Sequence[str], labels: Mapping[str, object]) -> np.ndarray:
    codes: dict[object, int] = {}
    out = np.empty(len(ids), dtype=np.int64)
    for i, rid in enumerate(ids):
        try:
            lab = labels[rid]
        except KeyError:
            raise LabelError(f"no label for embedded id {rid!r}") from None
        out[i] = codes.setdefault(lab, len(codes))
    return out


def _first_hits(idx, counts, lab, k):
    """Position (1-based) of the first same-label neighbor within the top k, 0 if none."""
    n = len(lab)
    hits = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = min(int(counts[i]), k)
        row = lab[idx[i, :c]] == lab[i]
        if row.any():
            hits[i] = int(np.argmax(row)) + 1
    return hits


def query_outcomes(index: EmbeddingIndex, labels: Mapping[str, object], k: int = 30) -> list[QueryOutcome]:
    lab = _label_array(index.ids, labels)
    idx, dist, counts = index.knn_all(k)
    hits = _first_hits(idx, counts, lab, k)
    return [
        QueryOutcome(
            index.ids[i],
            [(index.ids[j], float(d)) for j, d in zip(idx[i, :counts[i]], dist[i, :counts[i]])],
            int(hits[i]) or None,
        )
        for i in range(len(index))
    ]


@dataclass
class EvalReport:
    n_queries: int
    k: int
    mrr_lower: float
    mrr_upper: float
    mrr_exact: float | None
    recall: dict[int, float]
    pool_size: int | None = None
    index: dict = field(default_factory=dict)
    digests: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n_queries": self.n_queries,
            "k": self.k,
            "mrr_lower": self.mrr_lower,
            "mrr_upper": self.mrr_upper,
            "mrr_exact": self.mrr_exact,
            "recall": {f"@{k}": v for k, v in sorted(self.recall.items())},
            "pool_size": self.pool_size,
            "index": self.index,
            "digests": self.digests,
        }
        out.update(self.extra)
        return out

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _recall_from_ranks(ranks: np.ndarray) -> dict[int, float]:
    n = len(ranks)
    return {k: float(((ranks >= 1) & (ranks <= k)).sum() / n) if n else 0.0 for k in RECALL_AT}


def evaluate(embeddings, labels: Mapping[str, object], config: IndexConfig | None = None,
             index: EmbeddingIndex | None = None) -> EvalReport:
    """Every embedded function queries all the others.

    MRR bounds come from the top-k lists; recall@{1,2,5,10} counts queries
    with a same-label item in the top k; an exact index also yields the
    unbounded MRR from a full scan.
    """
    config = config or IndexConfig()
    emb = _as_embeddings(embeddings)
    lab = _label_array(emb.ids, labels)
    if index is None:
        index = build_index(emb, config)
    k_ret = max(config.k, max(RECALL_AT))
    idx, _, counts = index.knn_all(k_ret)
    bounded = _first_hits(idx, counts, lab, config.k)
    top10 = _first_hits(idx, counts, lab, max(RECALL_AT))
    n = len(emb)
    lower = np.where(bounded > 0, 1.0 / np.maximum(bounded, 1), 0.0)
    upper = np.where(bounded > 0, lower, 1.0 / (config.k + 1))
    mrr_exact = None
    if isinstance(index, ExactIndex):
        ranks = index.first_correct_ranks(lab)
        mrr_exact = float(np.where(ranks > 0, 1.0 / np.maximum(ranks, 1), 0.0).mean())
    return EvalReport(
        n_queries=n,
        k=config.k,
        mrr_lower=float(lower.mean()),
        mrr_upper=float(upper.mean()),
        mrr_exact=mrr_exact,
        recall=_recall_from_ranks(top10),
        index={**config.to_dict(), "kind": index.kind, "size": len(index)},
    )


def pool_evaluate(embeddings, labels: Mapping[str, object], pool_size: int,
                  n_queries: int | None = None, seed: int = 0) -> EvalReport:
    """Rank one true match among ``pool_size - 1`` random different-label distractors."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    emb = _as_embeddings(embeddings)
    lab = _label_array(emb.ids, labels)
    normed = normalize_rows(emb.vectors)
    n = len(emb)
    members: dict[int, list[int]] = {}
    for i, l in enumerate(lab):
        members.setdefault(int(l), []).append(i)
    eligible = [i for i in range(n) if len(members[int(lab[i])]) >= 2]
    rng = np.random.default_rng(seed)
    if n_queries is None or n_queries >= len(eligible):
        queries = eligible
    else:
        queries = sorted(rng.choice(eligible, size=n_queries, replace=False).tolist())
    ranks = np.zeros(len(queries), dtype=np.int64)
    all_pos = np.arange(n)
    for t, q in enumerate(queries):
        same = [j for j in members[int(lab[q])] if j != q]
        match = same[int(rng.integers(len(same)))]
        others = all_pos[lab != lab[q]]
        if pool_size - 1 > len(others):
            raise PoolError(
                f"pool size {pool_size} needs {pool_size - 1} distractors, "
                f"query {emb.ids[q]!r} has only {len(others)}"
            )
        distract = rng.choice(others, size=pool_size - 1, replace=False)
        cand = np.concatenate(([match], distract)).astype(np.int64)
        d = _kernels.cosine_distances_to(normed[cand], normed[q])
        dm = d[0]
        beaten = (d[1:] < dm) | ((d[1:] == dm) & (distract < match))
        ranks[t] = 1 + int(beaten.sum())
    rr = 1.0 / ranks if len(ranks) else np.zeros(0)
    mrr = float(rr.mean()) if len(rr) else 0.0
    return EvalReport(
        n_queries=len(queries),
        k=pool_size,
        mrr_lower=mrr,
        mrr_upper=mrr,
        mrr_exact=mrr,
        recall=_recall_from_ranks(ranks),
        pool_size=pool_size,
        index={"kind": "Pool", "seed": seed},
    )


# -- embeddings files ----------------------------------------------------------

def embed_corpus(params: ModelParameters, config: ModelConfig, records, out_dir: str | os.PathLike,
                 provenance: dict | None = None, chunk: int = 256) -> Embeddings:
    """Embed records in order and stream them to ``out_dir``.

    Layout: ``header.json`` (dim, count, digests), ``vectors.bin``
    (little-endian float32, row per record) and ``ids.txt``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = list(records)
    ids = [r.id for r in records]
    vec_hash = hashlib.sha256()
    rows = []
    with open(out_dir / "vectors.bin", "wb") as fh:
        for start in range(0, len(records), chunk):
            part = records[start:start + chunk]
            try:
                vecs = forward_batch(params, [r.bytes for r in part], config)
            except RefuseError as exc:
                raise type(exc)(f"while embedding near record {part[0].id!r}: {exc}") from exc
            blob = np.ascontiguousarray(vecs, dtype="<f4").tobytes()
            vec_hash.update(blob)
            fh.write(blob)
            rows.append(vecs.astype(np.float32))
    with open(out_dir / "ids.txt", "w", encoding="utf-8") as fh:
        for rid in ids:
            fh.write(rid + "\n")
    header = {
        "format_version": EMBEDDINGS_FORMAT_VERSION,
        "dim": config.output_dim,
        "count": len(ids),
        "dtype": "<f4",
        "vectors_digest": vec_hash.hexdigest(),
        **(provenance or {}),
    }
    with open(out_dir / "header.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    vectors = np.concatenate(rows) if rows else np.zeros((0, config.output_dim), np.float32)
    return Embeddings(ids, vectors.astype(np.float64), header)


def load_embeddings(path: str | os.PathLike) -> Embeddings:
    path = Path(path)
    try:
        header = json.loads((path / "header.json").read_text(encoding="utf-8"))
        ids = (path / "ids.txt").read_text(encoding="utf-8").splitlines()
        blob = (path / "vectors.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable embeddings directory ({exc})") from exc
    if header.get("format_version") != EMBEDDINGS_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported embeddings format {header.get('format_version')!r}")
    dim, count = int(header["dim"]), int(header["count"])
    if len(ids) != count or len(blob) != 4 * dim * count:
        raise SchemaError(f"{path}: header says {count}x{dim}, files disagree")
    if "vectors_digest" in header and hashlib.sha256(blob).hexdigest() != header["vectors_digest"]:
        raise SchemaError(f"{path}: vectors.bin does not match its recorded digest")
    vecs = np.frombuffer(blob, dtype="<f4").reshape(count, dim).astype(np.float64)
    return Embeddings(ids, vecs, header)

"""Leakage-free splits, byte-hash dedup, equivalence labeling and label masking."""

from __future__ import annotations

import json
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .corpus import BUILD_MODES, Corpus, FunctionRecord, byte_hash
from .errors import EmptyCorpusError, SchemaError

TRAIN = "Train"
TEST = "Test"
SCHEMES = ("None", "MaskType", "MaskSource", "MaskBoth")

# Labeling thresholds.
SMALL_FUNCTION_BYTES = 25
LONG_NAME_CHARS = 100
MAX_NORMALIZED_STD = 0.05


@dataclass
class SplitAssignment:
    side: dict[str, str]
    ratio: float = 0.8

    def ids(self, which: str) -> list[str]:
        return [i for i, s in self.side.items() if s == which]

    def records(self, corpus: Corpus, which: str) -> list[FunctionRecord]:
        return [r for r in corpus if self.side.get(r.id) == which]

    def counts(self) -> dict[str, int]:
        c = Counter(self.side.values())
        return {TRAIN: c.get(TRAIN, 0), TEST: c.get(TEST, 0)}


def split_by_source(corpus: Corpus, ratio: float = 0.8, seed: int = 0) -> SplitAssignment:
    """Assign whole source projects to Train or Test.

    Sources are shuffled, then visited largest-first (the shuffle breaks
    size ties). A source joins Train while Train is empty or while it
    fits under ``ratio`` of all functions; otherwise it goes to Test.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot split an empty corpus")

    sizes: dict[str, int] = {}
    for rec in corpus:
        sizes[rec.source_id] = sizes.get(rec.source_id, 0) + 1
    sources = list(sizes)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    shuffled = [sources[i] for i in order]
    shuffled.sort(key=lambda s: -sizes[s])  # stable: shuffle order breaks ties

    total = len(corpus)
    target = Fraction(ratio).limit_denominator(10**9) * total
    n_train = 0
    side_of_source = {}
    for src in shuffled:
        if n_train == 0 or n_train + sizes[src] <= target:
            side_of_source[src] = TRAIN
            n_train += sizes[src]
        else:
            side_of_source[src] = TEST
    return SplitAssignment({r.id: side_of_source[r.source_id] for r in corpus}, ratio)


def common_names(corpus: Corpus, threshold: float = 0.5) -> set[str]:
    """Names present in strictly more than ``threshold`` of all binaries."""
    all_bins = set()
    name_bins: dict[str, set] = defaultdict(set)
    for rec in corpus:
        all_bins.add(rec.binary_id)
        name_bins[rec.name].add(rec.binary_id)
    limit = threshold * len(all_bins)
    return {n for n, b in name_bins.items() if len(b) > limit}


def restrict_common_functions(
    corpus: Corpus, split: SplitAssignment, threshold: float = 0.5
) -> SplitAssignment:
    """Keep each common name on its majority side only (ties to Train).

    Minority-side records are dropped from the assignment, never moved,
    since moving them would break source-level separation.
    """
    common = common_names(corpus, threshold)
    per_side: dict[str, Counter] = defaultdict(Counter)
    for rec in corpus:
        if rec.name in common and rec.id in split.side:
            per_side[rec.name][split.side[rec.id]] += 1
    keep_side = {
        name: (TRAIN if c[TRAIN] >= c[TEST] else TEST) for name, c in per_side.items()
    }
    side = {}
    for rec in corpus:
        s = split.side.get(rec.id)
        if s is None:
            continue
        if rec.name in keep_side and keep_side[rec.name] != s:
            continue
        side[rec.id] = s
    return SplitAssignment(side, split.ratio)


def dedup(records: Iterable[FunctionRecord]) -> list[FunctionRecord]:
    """Drop records whose bytes already appeared earlier (first wins)."""
    seen = set()
    out = []
    for rec in records:
        h = byte_hash(rec)
        if h in seen:
            continue
        seen.add(h)
        out.append(rec)
    return out


@dataclass
class ModeStats:
    sizes: list[int]
    mean: float
    std: float

    @property
    def normalized_std(self) -> float:
        return self.std / self.mean


@dataclass
class LabelStats:
    sizes: dict[str, dict[str, list[int]]]
    modes: dict[tuple[str, str], ModeStats]

    def mode_stats(self, name: str) -> dict[str, ModeStats]:
        return {m: self.modes[(name, m)] for m in BUILD_MODES if (name, m) in self.modes}


def label_stats(records: Iterable[FunctionRecord]) -> LabelStats:
    sizes: dict[str, dict[str, list[int]]] = {}
    for rec in records:
        sizes.setdefault(rec.name, {m: [] for m in BUILD_MODES})[rec.build_mode].append(rec.size)
    modes = {}
    for name, by_mode in sizes.items():
        for mode, vals in by_mode.items():
            if not vals:
                continue
            arr = np.asarray(vals, dtype=np.float64)
            modes[(name, mode)] = ModeStats(list(vals), float(arr.mean()), float(arr.std()))
    return LabelStats(sizes, modes)


@dataclass
class LabelTable:
    label_of: dict[str, int]
    canonical: dict[int, str]
    scheme: str = "None"

    def label_string(self, record_id: str) -> str:
        return self.canonical[self.label_of[record_id]]

    def n_labels(self) -> int:
        return len(set(self.label_of.values()))

    def multiplicity(self) -> Counter:
        return Counter(self.label_of.values())

    def restrict(self, ids: Iterable[str]) -> "LabelTable":
        keep = set(ids)
        label_of = {i: l for i, l in self.label_of.items() if i in keep}
        used = set(label_of.values())
        return LabelTable(label_of, {l: s for l, s in self.canonical.items() if l in used}, self.scheme)

    @classmethod
    def from_strings(cls, strings: Iterable[tuple[str, str]], scheme: str = "None") -> "LabelTable":
        """Build a table from (record id, label string) pairs, ids numbered by first appearance."""
        ids_of: dict[str, int] = {}
        label_of = {}
        for rid, s in strings:
            if s not in ids_of:
                ids_of[s] = len(ids_of)
            label_of[rid] = ids_of[s]
        return cls(label_of, {v: k for k, v in ids_of.items()}, scheme)


def label_rule(name: str, stats: LabelStats) -> int:
    """Which rule decides ``name``: 1, 2, 3, or 0 for the per-source fallback."""
    by_mode = stats.sizes[name]
    if all(s <= SMALL_FUNCTION_BYTES for vals in by_mode.values() for s in vals):
        return 1
    if len(name) >= LONG_NAME_CHARS:
        return 2
    ms = stats.mode_stats(name)
    if ms and all(m.normalized_std < MAX_NORMALIZED_STD for m in ms.values()):
        return 3
    return 0


def assign_labels(records: Sequence[FunctionRecord], stats: LabelStats | None = None) -> LabelTable:
    if stats is None:
        stats = label_stats(records)
    rules: dict[str, int] = {}
    pairs = []
    for rec in records:
        if rec.name not in rules:
            rules[rec.name] = label_rule(rec.name, stats)
        label = rec.name if rules[rec.name] else f"{rec.source_id}\\{rec.name}"
        pairs.append((rec.id, label))
    return LabelTable.from_strings(pairs)


def kept_singleton_count(n_other: int, n_singletons: int, max_frac: float) -> int:
    """Largest s <= n_singletons with s <= max_frac * (n_other + s), exactly."""
    f = Fraction(str(max_frac))
    if f >= 1:
        return n_singletons
    # s (1 - f) <= f n_other
    bound = (f * n_other) / (1 - f)
    return min(n_singletons, int(bound))  # floor for non-negative rationals


def downsample_singletons(
    table: LabelTable,
    records: Sequence[FunctionRecord],
    max_frac: float = 0.05,
    seed: int = 0,
) -> list[FunctionRecord]:
    mult = Counter(table.label_of[r.id] for r in records)
    singles = [i for i, r in enumerate(records) if mult[table.label_of[r.id]] == 1]
    if not singles:
        return list(records)
    n_keep = kept_singleton_count(len(records) - len(singles), len(singles), max_frac)
    rng = np.random.default_rng(seed)
    kept = set(np.asarray(singles)[rng.choice(len(singles), size=n_keep, replace=False)].tolist())
    dropped = set(singles) - kept
    return [r for i, r in enumerate(records) if i not in dropped]


_SOURCE_PREFIX = re.compile(r"^(?:[0-9]+\\)+")


def mask_source(label: str) -> str:
    """Strip leading ``<digits>\\`` source-project prefixes."""
    return _SOURCE_PREFIX.sub("", label, count=1)


def mask_type(name: str) -> str:
    """Replace the contents of each outermost ``<...>`` group with ``#``."""
    depth = 0
    for ch in name:
        if ch == "<":
            depth += 1
        elif ch == ">":
            depth -= 1
            if depth < 0:
                return name
    if depth != 0:
        return name

    out = []
    depth = 0
    for ch in name:
        if ch == "<":
            if depth == 0:
                out.append("<#")
            depth += 1
        elif ch == ">":
            depth -= 1
            if depth == 0:
                out.append(">")
        elif depth == 0:
            out.append(ch)
    return "".join(out)


def apply_scheme(label: str, scheme: str) -> str:
    if scheme == "None":
        return label
    if scheme == "MaskType":
        return mask_type(label)
    if scheme == "MaskSource":
        return mask_source(label)
    if scheme == "MaskBoth":
        return mask_type(mask_source(label))
    raise SchemaError(f"unknown label scheme {scheme!r}; expected one of {SCHEMES}")


def normalize_labels(table: LabelTable, scheme: str) -> LabelTable:
    """Rewrite canonical strings under ``scheme`` and merge collisions."""
    if scheme not in SCHEMES:
        raise SchemaError(f"unknown label scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "None":
        return table
    new_id: dict[int, int] = {}
    canonical: dict[int, str] = {}
    by_string: dict[str, int] = {}
    for lid in sorted(table.canonical):
        s = apply_scheme(table.canonical[lid], scheme)
        if s not in by_string:
            by_string[s] = len(by_string)
            canonical[by_string[s]] = s
        new_id[lid] = by_string[s]
    label_of = {rid: new_id[l] for rid, l in table.label_of.items()}
    if table.scheme in ("None", scheme):
        combined = scheme
    else:
        combined = "MaskBoth"
    return LabelTable(label_of, canonical, combined)


@dataclass
class CurationResult:
    split: SplitAssignment
    labels: LabelTable
    train: list[FunctionRecord]
    test: list[FunctionRecord]
    stage_counts: dict[str, dict[str, int]] = field(default_factory=dict)


def curate(
    corpus: Corpus,
    ratio: float = 0.8,
    common_threshold: float = 0.5,
    singleton_max_frac: float = 0.05,
    scheme: str = "None",
    seed: int = 0,
) -> CurationResult:
    """Full curation pipeline over one corpus.

    Labels are assigned independently per side. Singleton downsampling is
    applied to the training side only.
    """
    counts: dict[str, dict[str, int]] = {"input": {"total": len(corpus)}}
    split = split_by_source(corpus, ratio, seed)
    counts["split"] = split.counts()
    split = restrict_common_functions(corpus, split, common_threshold)
    counts["common_restricted"] = split.counts()

    sides = {s: dedup(split.records(corpus, s)) for s in (TRAIN, TEST)}
    counts["dedup"] = {s: len(v) for s, v in sides.items()}

    tables = {s: assign_labels(v, label_stats(v)) for s, v in sides.items()}
    counts["labels"] = {s: t.n_labels() for s, t in tables.items()}

    sides[TRAIN] = downsample_singletons(tables[TRAIN], sides[TRAIN], singleton_max_frac, seed)
    counts["downsampled"] = {s: len(v) for s, v in sides.items()}

    pairs = []
    for s in (TRAIN, TEST):
        keep = {r.id for r in sides[s]}
        t = tables[s]
        pairs.extend((rid, t.canonical[l]) for rid, l in t.label_of.items() if rid in keep)
    order = corpus.by_id
    pairs.sort(key=lambda p: order[p[0]])
    table = normalize_labels(LabelTable.from_strings(pairs), scheme)
    counts["final_labels"] = {
        s: len({table.label_of[r.id] for r in sides[s]}) for s in (TRAIN, TEST)
    }

    kept = {r.id for s in sides.values() for r in s}
    final_split = SplitAssignment({i: s for i, s in split.side.items() if i in kept}, ratio)
    return CurationResult(final_split, table, sides[TRAIN], sides[TEST], counts)


def write_split(split: SplitAssignment, corpus: Corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus:
            if rec.id in split.side:
                fh.write(json.dumps({"id": rec.id, "side": split.side[rec.id]}) + "\n")


def read_split(path: str | os.PathLike, ratio: float = 0.8) -> SplitAssignment:
    side = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                if obj["side"] not in (TRAIN, TEST):
                    raise SchemaError(f"bad side {obj['side']!r} for id {obj['id']!r}")
                side[obj["id"]] = obj["side"]
    return SplitAssignment(side, ratio)


def write_labels(table: LabelTable, path: str | os.PathLike, order: Iterable[str] | None = None) -> None:
    ids = list(order) if order is not None else list(table.label_of)
    with open(path, "w", encoding="utf-8") as fh:
        for rid in ids:
            if rid in table.label_of:
                fh.write(
                    json.dumps({"id": rid, "label": table.label_string(rid), "scheme": table.scheme})
                    + "\n"
                )


def read_labels(path: str | os.PathLike) -> LabelTable:
    pairs = []
    schemes = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                pairs.append((obj["id"], obj["label"]))
                schemes.add(obj.get("scheme", "None"))
    if len(schemes) > 1:
        raise SchemaError(f"label sidecar mixes schemes: {sorted(schemes)}")
    return LabelTable.from_strings(pairs, schemes.pop() if schemes else "None")

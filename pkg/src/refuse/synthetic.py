"""Seeded synthetic corpora for smoke tests and the overfit experiment."""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, FunctionRecord
from .curation import LabelTable

NOP = 0x90


def perturb(base: bytes, n_insert: int, rng: np.random.Generator, filler: int = NOP) -> bytes:
    """Insert ``n_insert`` single filler bytes at random positions."""
    out = bytearray(base)
    for _ in range(n_insert):
        out.insert(int(rng.integers(0, len(out) + 1)), filler)
    return bytes(out)


def variant_corpus(
    n_labels: int = 200,
    n_variants: int = 4,
    min_len: int = 64,
    max_len: int = 512,
    max_insertions: int = 8,
    seed: int = 0,
) -> tuple[Corpus, LabelTable]:
    """``n_labels`` random base functions, each with ``n_variants`` perturbed copies.

    Every variant gets between 1 and ``max_insertions`` inserted no-op bytes.
    Variants of one base share a label; bases themselves are not included.
    """
    rng = np.random.default_rng(seed)
    records, pairs = [], []
    for lab in range(n_labels):
        size = int(rng.integers(min_len, max_len + 1))
        base = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        for v in range(n_variants):
            data = perturb(base, int(rng.integers(1, max_insertions + 1)), rng)
            rid = f"L{lab:04d}_v{v}"
            records.append(FunctionRecord(
                id=rid, name=f"func_{lab:04d}", bytes=data, source_id=f"src{lab:04d}",
                binary_id=f"bin{v}", build_mode="Release" if v % 2 else "Debug",
            ))
            pairs.append((rid, f"func_{lab:04d}"))
    return Corpus(records), LabelTable.from_strings(pairs)


def random_corpus(
    rng: np.random.Generator,
    n_records: int = 60,
    n_sources: int = 6,
    n_binaries: int = 10,
    n_names: int = 15,
    max_len: int = 80,
    dup_prob: float = 0.15,
) -> Corpus:
    """Small messy corpus with shared names, duplicate bytes and both build modes."""
    names = [f"fn{i}" for i in range(n_names)]
    names.append("std::vector<int>::push_back")
    names.append("std::vector<char>::push_back")
    records = []
    pool: list[bytes] = []
    for i in range(n_records):
        if pool and rng.random() < dup_prob:
            data = pool[int(rng.integers(len(pool)))]
        else:
            data = rng.integers(0, 256, size=int(rng.integers(1, max_len + 1)), dtype=np.uint8).tobytes()
            pool.append(data)
        src = int(rng.integers(n_sources))
        name = names[int(rng.integers(len(names)))]
        if rng.random() < 0.2:
            name = f"{src}\\{name}" if rng.random() < 0.5 else name
        records.append(FunctionRecord(
            id=f"r{i}", name=name, bytes=data, source_id=f"{1000 + src}",
            binary_id=f"b{int(rng.integers(n_binaries))}",
            build_mode="Debug" if rng.random() < 0.5 else "Release",
        ))
    return Corpus(records)

"""Function-record data model, JSONL corpus I/O and content hashing.

One corpus line looks like::

    {"id": "f1", "name": "main", "bytes_hex": "9090c3", "source_id": "s1",
     "binary_id": "b1", "build_mode": "Release", "family": null}

Producers must be consistent about whether bytes are captured before or
after relocation fixups; the format itself does not record which.
"""

from __future__ import annotations

import binascii
import hashlib
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import (
    DuplicateIdError,
    EmptyFunctionError,
    EncodingError,
    ParseError,
    SchemaError,
)

BUILD_MODES = ("Debug", "Release")
REQUIRED_FIELDS = ("id", "name", "bytes_hex", "source_id", "binary_id", "build_mode")


@dataclass(frozen=True)
class FunctionRecord:
    id: str
    name: str
    bytes: bytes
    source_id: str
    binary_id: str
    build_mode: str
    family: str | None = None

    def __post_init__(self):
        if len(self.bytes) == 0:
            raise EmptyFunctionError(f"function {self.id!r} has no bytes")
        if self.build_mode not in BUILD_MODES:
            raise SchemaError(f"build_mode must be one of {BUILD_MODES}, got {self.build_mode!r}")

    @property
    def size(self) -> int:
        return len(self.bytes)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "bytes_hex": self.bytes.hex(),
            "source_id": self.source_id,
            "binary_id": self.binary_id,
            "build_mode": self.build_mode,
            "family": self.family,
        }


def parse_record_line(line: str, lineno: int | None = None) -> FunctionRecord:
    where = f"line {lineno}" if lineno is not None else "record"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: malformed JSON ({exc.msg} at column {exc.colno})") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a JSON object, got {type(obj).__name__}")

    for key in REQUIRED_FIELDS:
        if key not in obj:
            raise SchemaError(f"{where}: missing required field {key!r}")
        if not isinstance(obj[key], str):
            raise SchemaError(f"{where}: field {key!r} must be a string")
    family = obj.get("family")
    if family is not None and not isinstance(family, str):
        raise SchemaError(f"{where}: field 'family' must be a string or null")
    if obj["build_mode"] not in BUILD_MODES:
        raise SchemaError(f"{where}: build_mode must be Debug or Release, got {obj['build_mode']!r}")

    hexstr = obj["bytes_hex"]
    if hexstr == "":
        raise EmptyFunctionError(f"{where}: bytes_hex is empty")
    if len(hexstr) % 2 or hexstr != hexstr.lower():
        raise EncodingError(f"{where}: bytes_hex must be lowercase hex of even length")
    try:
        raw = binascii.unhexlify(hexstr)
    except (binascii.Error, ValueError) as exc:
        raise EncodingError(f"{where}: bytes_hex is not valid hex") from exc

    return FunctionRecord(
        id=obj["id"],
        name=obj["name"],
        bytes=raw,
        source_id=obj["source_id"],
        binary_id=obj["binary_id"],
        build_mode=obj["build_mode"],
        family=family,
    )


def serialize_record(record: FunctionRecord) -> str:
    return json.dumps(record.to_json(), separators=(",", ":"))


class Corpus(Sequence[FunctionRecord]):
    """Immutable ordered collection of records with id lookup.

    File order is the canonical order; every seeded sampler downstream
    indexes into it.
    """

    def __init__(self, records: Iterable[FunctionRecord] = ()):
        self._records = tuple(records)
        by_id = {}
        for pos, rec in enumerate(self._records):
            if rec.id in by_id:
                raise DuplicateIdError(f"duplicate function id {rec.id!r} at position {pos}")
            by_id[rec.id] = pos
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, i):
        return self._records[i]

    def __iter__(self) -> Iterator[FunctionRecord]:
        return iter(self._records)

    @property
    def records(self) -> tuple[FunctionRecord, ...]:
        return self._records

    @property
    def by_id(self) -> dict[str, int]:
        return dict(self._by_id)

    def position(self, record_id: str) -> int:
        return self._by_id[record_id]

    def get(self, record_id: str) -> FunctionRecord:
        return self._records[self._by_id[record_id]]

    def __contains__(self, record_id) -> bool:
        return record_id in self._by_id

    def subset(self, ids: Iterable[str]) -> "Corpus":
        """Records whose id is in ``ids``, kept in canonical order."""
        wanted = set(ids)
        return Corpus(r for r in self._records if r.id in wanted)


def load_corpus(path: str | os.PathLike) -> Corpus:
    records = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_record_line(line, lineno)
            if rec.id in seen:
                raise DuplicateIdError(
                    f"line {lineno}: id {rec.id!r} already defined on line {seen[rec.id]}"
                )
            seen[rec.id] = lineno
            records.append(rec)
    return Corpus(records)


def write_corpus(records: Iterable[FunctionRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(serialize_record(rec))
            fh.write("\n")


def byte_hash(record: FunctionRecord | bytes) -> str:
    """SHA-256 of the function bytes only, as 64 lowercase hex chars."""
    data = record if isinstance(record, (bytes, bytearray)) else record.bytes
    return hashlib.sha256(data).hexdigest()


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class NameStats:
    count: int = 0
    binaries: set = field(default_factory=set)
    sizes: dict = field(default_factory=lambda: {m: [] for m in BUILD_MODES})

    @property
    def distinct_binaries(self) -> int:
        return len(self.binaries)

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "distinct_binaries": self.distinct_binaries,
            "sizes": {m: list(v) for m, v in self.sizes.items()},
        }


@dataclass
class CorpusStats:
    n_records: int
    n_binaries: int
    per_name: dict[str, NameStats]

    def to_json(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_binaries": self.n_binaries,
            "n_names": len(self.per_name),
            "per_name": {k: v.to_json() for k, v in sorted(self.per_name.items())},
        }


def corpus_stats(corpus: Iterable[FunctionRecord]) -> CorpusStats:
    per_name: dict[str, NameStats] = defaultdict(NameStats)
    binaries = set()
    n = 0
    for rec in corpus:
        n += 1
        binaries.add(rec.binary_id)
        st = per_name[rec.name]
        st.count += 1
        st.binaries.add(rec.binary_id)
        st.sizes[rec.build_mode].append(rec.size)
    return CorpusStats(n_records=n, n_binaries=len(binaries), per_name=dict(per_name))

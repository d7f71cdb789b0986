import zlib

import numpy as np
import pytest

from refuse.corpus import FunctionRecord

_ACCEPTANCE: list[tuple[int, bool, str]] = []


def rec(rid, name="f", data=b"\x90\x90\xc3", source="s1", binary="b1", mode="Release", family=None):
    """Record factory; an int ``data`` means that many copies of an id-derived byte."""
    if isinstance(data, int):
        data = bytes([zlib.crc32(rid.encode()) & 0xFF]) * data
    return FunctionRecord(rid, name, data, source, binary, mode, family)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Call ``criterion(n, ok, detail)`` once per acceptance check; prints and records it."""

    def report(number: int, ok: bool, detail: str = "") -> bool:
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append((number, ok, detail))
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

"""Canonical run trace: the single artifact every audit consumes.

One record per line, tab-separated: time_us, seq, category, then
key=value fields in a fixed per-category order. All values are integers
or short tokens, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class MalformedTrace(ValueError):
    """Trace file cannot be parsed into well-formed entries."""


@dataclass(frozen=True)
class TraceEntry:
    time_us: int
    seq: int
    category: str
    fields: tuple[tuple[str, str], ...]

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def get_int(self, key: str) -> int:
        value = self.get(key)
        if value is None:
            raise MalformedTrace(f"{self.category} entry missing field {key}")
        return int(value)

    def to_line(self) -> str:
        parts = [str(self.time_us), str(self.seq), self.category]
        parts.extend(f"{k}={v}" for k, v in self.fields)
        return "\t".join(parts)


class Trace:
    """Append-only, (time, seq)-ordered record of one run."""

    def __init__(self):
        self.entries: list[TraceEntry] = []
        self._seq = 0

    def append(self, time_us: int, category: str, **fields) -> TraceEntry:
        if self.entries and time_us < self.entries[-1].time_us:
            raise AssertionError(
                f"trace time went backwards: {time_us} after {self.entries[-1].time_us}"
            )
        rendered = tuple((k, _render(v)) for k, v in fields.items())
        entry = TraceEntry(time_us, self._seq, category, rendered)
        self._seq += 1
        self.entries.append(entry)
        return entry

    def write(self, path: str) -> None:
        with open(path, "w", newline="\n") as fh:
            for entry in self.entries:
                fh.write(entry.to_line())
                fh.write("\n")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def _render(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, Enum):  # before str: (str, Enum) must render its value
        text = str(value.value)
    elif isinstance(value, (int, str)):
        text = str(value)
    else:
        raise TypeError(f"trace field values must be int/str/enum, got {type(value)}")
    if "\t" in text or "\n" in text or "=" in text:
        raise ValueError(f"trace value contains a reserved character: {text!r}")
    return text


def parse_line(line: str, lineno: int) -> TraceEntry:
    cols = line.rstrip("\n").split("\t")
    if len(cols) < 3:
        raise MalformedTrace(f"line {lineno}: expected at least 3 columns")
    try:
        time_us = int(cols[0])
        seq = int(cols[1])
    except ValueError as exc:
        raise MalformedTrace(f"line {lineno}: non-integer time/seq") from exc
    fields = []
    for col in cols[3:]:
        key, sep, value = col.partition("=")
        if not sep or not key:
            raise MalformedTrace(f"line {lineno}: bad field {col!r}")
        fields.append((key, value))
    return TraceEntry(time_us, seq, cols[2], tuple(fields))


def parse_trace(path: str) -> list[TraceEntry]:
    """Load a trace file, verifying (time, seq) ordering as we go."""
    entries: list[TraceEntry] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            entry = parse_line(line, lineno)
            if entries and (entry.time_us, entry.seq) <= (entries[-1].time_us, entries[-1].seq):
                raise MalformedTrace(f"line {lineno}: entries out of (time, seq) order")
            entries.append(entry)
    if not entries:
        raise MalformedTrace("empty trace")
    return entries

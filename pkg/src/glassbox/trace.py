"""Reading and schema-checking JSON Lines interaction traces.

One record per line::

    {"id": "e1", "ts": 1, "in": {...}, "out": {...}, "env": {...}}

``env`` is optional; ``in`` and ``out`` are required. Timestamps must not
decrease. Monetary (``decimal``) fields are integer minor units.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import sys
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

from .expr import BOOL, DECIMAL, INT, INT_MAX, INT_MIN, STRING

STRICT = "strict"
LENIENT = "lenient"

_TOP_KEYS = frozenset(("id", "ts", "in", "out", "env"))
_SECTION_KEYS = (("in", "inp"), ("out", "out"), ("env", "env"))


class Event:
    """One observed interaction. ``inp``/``out``/``env`` hold only fields that
    passed schema checks; ``pos`` is the 0-based position in the trace."""

    __slots__ = ("id", "ts", "pos", "inp", "out", "env", "warnings")

    def __init__(self, id, ts, inp, out, env=None, pos=0, warnings=()):
        self.id = id
        self.ts = ts
        self.pos = pos
        self.inp = inp
        self.out = out
        self.env = env if env is not None else {}
        self.warnings = warnings

    def section(self, name: str) -> dict:
        return self.inp if name == "in" else getattr(self, name)

    def to_record(self) -> dict:
        record = {"id": self.id, "ts": self.ts, "in": self.inp, "out": self.out}
        if self.env:
            record["env"] = self.env
        return record

    def __repr__(self) -> str:
        return f"Event({self.id!r}, pos={self.pos}, ts={self.ts})"

    def __eq__(self, other):
        if not isinstance(other, Event):
            return NotImplemented
        return (self.id, self.ts, self.pos, self.inp, self.out, self.env) == (
            other.id, other.ts, other.pos, other.inp, other.out, other.env
        )


@dataclass(frozen=True)
class SchemaViolation:
    event_id: str | None
    field: str
    expected: str
    found: str
    severity: str  # "error" | "warning"
    line: int = 0

    def __str__(self) -> str:
        who = f"event {self.event_id}" if self.event_id else "record"
        return f"line {self.line}: {who}: {self.field}: expected {self.expected}, found {self.found}"


class TraceError(Exception):
    """The trace cannot be read further."""

    def __init__(self, violation: SchemaViolation):
        super().__init__(str(violation))
        self.violation = violation


def _conform(value, type_name: str):
    """Return the value coerced to ``type_name``, or raise ValueError."""
    if type_name == INT or type_name == DECIMAL:
        if isinstance(value, int) and not isinstance(value, bool):
            if INT_MIN <= value <= INT_MAX:
                return value
            raise ValueError("integer out of range")
        if isinstance(value, float) and value.is_integer() and INT_MIN <= value <= INT_MAX:
            return int(value)
        raise ValueError
    if type_name == STRING:
        if isinstance(value, str):
            return value
        raise ValueError
    if type_name == BOOL:
        if isinstance(value, bool):
            return value
        raise ValueError
    raise ValueError


def _describe(value) -> str:
    text = json.dumps(value)
    return text if len(text) <= 40 else text[:37] + "..."


def _open_lines(source) -> tuple[Iterable[bytes], str, IO | None]:
    if isinstance(source, (str, Path)):
        descriptor = str(source)
        if descriptor == "-":
            return sys.stdin.buffer, "<stdin>", None
        if descriptor.endswith(".gz"):
            fh = gzip.open(descriptor, "rb")
        else:
            fh = open(descriptor, "rb")
        return fh, descriptor, fh
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source), "<bytes>", None
    # any iterable of str or bytes lines
    return source, getattr(source, "name", "<stream>"), None


class Trace:
    """An iterable trace. After iteration, ``count`` and ``sha256`` describe
    the bytes consumed.

    ``id_horizon`` bounds the memory spent on duplicate-id detection: ids are
    checked for uniqueness against the most recent ``id_horizon`` events.
    """

    def __init__(self, source, schema: Mapping[tuple[str, str], str], mode: str = LENIENT, *, id_horizon: int = 4096):
        if mode not in (STRICT, LENIENT):
            raise ValueError(f"unknown mode {mode!r}")
        self.source = source
        self.mode = mode
        self.id_horizon = max(1, id_horizon)
        self.descriptor = "-" if source == "-" else str(source) if isinstance(source, (str, Path)) else "<stream>"
        self.count = 0
        self.warning_count = 0
        self._hash = hashlib.sha256()
        self._sections: dict[str, dict[str, str]] = {"in": {}, "out": {}, "env": {}}
        for (section, name), t in schema.items():
            self._sections[section][name] = t

    @property
    def sha256(self) -> str:
        return self._hash.hexdigest()

    def __iter__(self) -> Iterator[Event]:
        lines, _, fh = _open_lines(self.source)
        try:
            yield from self._read(lines)
        finally:
            if fh is not None:
                fh.close()

    def _read(self, lines: Iterable) -> Iterator[Event]:
        strict = self.mode == STRICT
        sections = self._sections
        update = self._hash.update
        recent_ids: deque[str] = deque()
        recent_set: set[str] = set()
        horizon = self.id_horizon
        last_ts = None
        pos = 0
        # decoding to str first skips json.loads' encoding detection
        decode = json.JSONDecoder().decode
        for lineno, raw in enumerate(lines, 1):
            if isinstance(raw, str):
                raw = raw.encode("utf-8")
            update(raw)
            if not raw.strip():
                continue
            try:
                record = decode(raw.decode("utf-8"))
            except ValueError as exc:  # includes UnicodeDecodeError
                raise TraceError(SchemaViolation(None, "<record>", "one JSON object per line", f"invalid JSON ({exc.msg})" if hasattr(exc, "msg") else "invalid JSON", "error", lineno)) from None
            if type(record) is not dict:
                raise TraceError(SchemaViolation(None, "<record>", "JSON object", _describe(record), "error", lineno))
            eid = record.get("id")
            if not isinstance(eid, str) or not eid:
                raise TraceError(SchemaViolation(None, "id", "non-empty string", _describe(eid) if "id" in record else "absent", "error", lineno))
            ts = record.get("ts")
            if not isinstance(ts, int) or isinstance(ts, bool):
                raise TraceError(SchemaViolation(eid, "ts", "integer milliseconds", _describe(ts) if "ts" in record else "absent", "error", lineno))
            if last_ts is not None and ts < last_ts:
                raise TraceError(SchemaViolation(eid, "ts", f">= {last_ts} (timestamps must not decrease)", str(ts), "error", lineno))
            last_ts = ts
            if eid in recent_set:
                raise TraceError(SchemaViolation(eid, "id", "unique id", "duplicate", "error", lineno))
            recent_ids.append(eid)
            recent_set.add(eid)
            if len(recent_ids) > horizon:
                recent_set.discard(recent_ids.popleft())

            warnings: list[SchemaViolation] = []
            if len(record) > 5 or not _TOP_KEYS.issuperset(record):
                for key in sorted(set(record) - _TOP_KEYS):
                    v = SchemaViolation(eid, key, "no extra top-level keys", "present", "error" if strict else "warning", lineno)
                    if strict:
                        raise TraceError(v)
                    warnings.append(v)

            parsed = {}
            for section, attr in _SECTION_KEYS:
                data = record.get(section)
                if data is None:
                    if section == "env":
                        parsed[attr] = {}
                        continue
                    raise TraceError(SchemaViolation(eid, section, "object", "absent", "error", lineno))
                if type(data) is not dict:
                    raise TraceError(SchemaViolation(eid, section, "object", _describe(data), "error", lineno))
                declared = sections[section]
                clean = data
                for name, value in data.items():
                    t = declared.get(name)
                    if t is None:
                        v = SchemaViolation(eid, f"{section}.{name}", "a declared field", "undeclared field", "error" if strict else "warning", lineno)
                        if strict:
                            raise TraceError(v)
                        warnings.append(v)
                        continue
                    vt = type(value)
                    if vt is int and (t == INT or t == DECIMAL) and INT_MIN <= value <= INT_MAX:
                        continue
                    if vt is str and t == STRING:
                        continue
                    if vt is bool and t == BOOL:
                        continue
                    try:
                        coerced = _conform(value, t)
                    except ValueError:
                        v = SchemaViolation(eid, f"{section}.{name}", t, _describe(value), "error" if strict else "warning", lineno)
                        if strict:
                            raise TraceError(v) from None
                        warnings.append(v)
                        if clean is data:
                            clean = dict(data)
                        del clean[name]
                        continue
                    if clean is data:
                        clean = dict(data)
                    clean[name] = coerced
                parsed[attr] = clean
            if warnings:
                self.warning_count += len(warnings)
            yield Event(eid, ts, parsed["inp"], parsed["out"], parsed["env"], pos, tuple(warnings))
            pos += 1
            self.count = pos


def read_trace(source, schema: Mapping[tuple[str, str], str], mode: str = LENIENT, **kwargs) -> Iterator[Event]:
    """Stream validated events from a path, ``"-"`` (stdin), bytes, or an
    iterable of lines. Raises :class:`TraceError` on malformed records,
    timestamp regressions, duplicate ids and, in strict mode, on any schema
    mismatch. In lenient mode mismatching fields are dropped and recorded on
    ``Event.warnings``."""
    return iter(Trace(source, schema, mode, **kwargs))


def field_names_present(event: Event, section: str) -> set[str]:
    return set(event.section(section))


def dump_event(record: Mapping) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)

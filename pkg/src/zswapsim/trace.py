"""Trace events and the on-disk trace formats.

Binary layout (little-endian)::

    header   "ASWP" | u16 version=1 | u16 flags | u64 record count     (16 bytes)
    record   u8 kind | u64 seq | kind fields | u16 payload length | payload | u32 CRC32C

Kind fields: touch ``u32 uid, u64 pfn, u8 write``; launch-begin ``u32 uid,
u32 launch``; launch-end and foreground ``u32 uid``. The CRC covers every
preceding byte of the record.

JSONL carries one event per line with the keys ``seq, kind, uid, pfn, launch,
write, payload`` (payload base64, or null).
"""

import base64
import enum
import io
import json
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

from crc32c import crc32c

from .errors import (
    DataError,
    TraceCorruptionError,
    TraceFormatError,
    TraceTruncatedError,
    TraceWriteError,
)
from .sizes import PAGE_SIZE

MAGIC = b"ASWP"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")


class PageId(NamedTuple):
    uid: int
    pfn: int

    def __str__(self):
        return f"{self.uid}:{self.pfn:#x}"


class Kind(enum.IntEnum):
    TOUCH = 0
    LAUNCH_BEGIN = 1
    LAUNCH_END = 2
    FOREGROUND = 3


_KIND_NAMES = {
    Kind.TOUCH: "touch",
    Kind.LAUNCH_BEGIN: "launch_begin",
    Kind.LAUNCH_END: "launch_end",
    Kind.FOREGROUND: "foreground",
}
_KIND_BY_NAME = {v: k for k, v in _KIND_NAMES.items()}

_PREFIX = struct.Struct("<BQ")
_FIELDS = {
    Kind.TOUCH: struct.Struct("<IQB"),
    Kind.LAUNCH_BEGIN: struct.Struct("<II"),
    Kind.LAUNCH_END: struct.Struct("<I"),
    Kind.FOREGROUND: struct.Struct("<I"),
}
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@dataclass(frozen=True, slots=True)
class TraceEvent:
    seq: int
    kind: Kind
    uid: int
    pfn: int = 0
    launch: int = 0
    write: bool = False
    payload: Optional[bytes] = None

    @property
    def page(self):
        return PageId(self.uid, self.pfn)

    def __post_init__(self):
        if self.payload is not None and len(self.payload) != PAGE_SIZE:
            raise DataError(f"event {self.seq}: payload must be {PAGE_SIZE} bytes")
        if self.payload is not None and self.kind != Kind.TOUCH:
            raise DataError(f"event {self.seq}: only touch events carry a payload")


def touch(seq, uid, pfn, payload=None, write=False):
    return TraceEvent(seq, Kind.TOUCH, uid, pfn, 0, write, payload)


def launch_begin(seq, uid, launch):
    return TraceEvent(seq, Kind.LAUNCH_BEGIN, uid, 0, launch)


def launch_end(seq, uid):
    return TraceEvent(seq, Kind.LAUNCH_END, uid)


def foreground(seq, uid):
    return TraceEvent(seq, Kind.FOREGROUND, uid)


def encode_record(ev):
    kind = Kind(ev.kind)
    parts = [_PREFIX.pack(kind, ev.seq)]
    if kind == Kind.TOUCH:
        parts.append(_FIELDS[kind].pack(ev.uid, ev.pfn, 1 if ev.write else 0))
    elif kind == Kind.LAUNCH_BEGIN:
        parts.append(_FIELDS[kind].pack(ev.uid, ev.launch))
    else:
        parts.append(_FIELDS[kind].pack(ev.uid))
    payload = ev.payload or b""
    parts.append(_U16.pack(len(payload)))
    parts.append(payload)
    body = b"".join(parts)
    return body + _U32.pack(crc32c(body))


def write_trace(events, sink, flags=0):
    """Write events in canonical binary form; returns the number of bytes written."""
    events = list(events)
    prev = None
    for ev in events:
        if prev is not None and ev.seq <= prev:
            raise DataError(f"events out of order at seq {ev.seq}")
        prev = ev.seq
    offset = 0

    def emit(blob):
        nonlocal offset
        try:
            sink.write(blob)
        except OSError as exc:
            raise TraceWriteError(offset, exc) from exc
        offset += len(blob)

    emit(HEADER.pack(MAGIC, VERSION, flags, len(events)))
    for ev in events:
        emit(encode_record(ev))
    return offset


def iter_trace(source):
    """Yield events from a binary trace, validating every checksum as it goes."""
    buf = source.read() if hasattr(source, "read") else bytes(source)
    if len(buf) < HEADER.size:
        raise TraceFormatError("file shorter than the 16-byte header")
    magic, version, _flags, count = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TraceFormatError(f"unsupported version {version}")
    pos = HEADER.size
    end = len(buf)
    prev_seq = None
    for ordinal in range(count):
        start = pos
        if pos + _PREFIX.size > end:
            raise TraceTruncatedError(ordinal, start)
        kind_raw, seq = _PREFIX.unpack_from(buf, pos)
        try:
            kind = Kind(kind_raw)
        except ValueError:
            # an unknown kind is most likely a flipped bit; report it as corruption
            raise TraceCorruptionError(ordinal, start, f"unknown kind {kind_raw}") from None
        pos += _PREFIX.size
        fields = _FIELDS[kind]
        if pos + fields.size + 2 > end:
            raise TraceTruncatedError(ordinal, start)
        vals = fields.unpack_from(buf, pos)
        pos += fields.size
        (plen,) = _U16.unpack_from(buf, pos)
        pos += 2
        if plen not in (0, PAGE_SIZE):
            if pos + plen + 4 > end:
                raise TraceTruncatedError(ordinal, start)
            raise TraceCorruptionError(ordinal, start, f"bad payload length {plen}")
        if pos + plen + 4 > end:
            raise TraceTruncatedError(ordinal, start)
        payload = bytes(buf[pos:pos + plen]) if plen else None
        pos += plen
        (crc,) = _U32.unpack_from(buf, pos)
        if crc32c(buf[start:pos]) != crc:
            raise TraceCorruptionError(ordinal, start)
        pos += 4
        if prev_seq is not None and seq <= prev_seq:
            raise TraceFormatError(f"record {ordinal}: seq {seq} not increasing")
        prev_seq = seq
        if kind == Kind.TOUCH:
            uid, pfn, write = vals
            yield TraceEvent(seq, kind, uid, pfn, 0, bool(write), payload)
        elif kind == Kind.LAUNCH_BEGIN:
            yield TraceEvent(seq, kind, vals[0], 0, vals[1])
        else:
            yield TraceEvent(seq, kind, vals[0])
    if pos != end:
        raise TraceFormatError(f"{end - pos} trailing bytes after {count} records")


def read_trace(source):
    return list(iter_trace(source))


def save(events, path):
    with open(path, "wb") as fh:
        return write_trace(events, fh)


def load(path):
    with open(path, "rb") as fh:
        return read_trace(fh)


def trace_bytes(events):
    bio = io.BytesIO()
    write_trace(events, bio)
    return bio.getvalue()


def event_to_json(ev):
    return {
        "seq": ev.seq,
        "kind": _KIND_NAMES[Kind(ev.kind)],
        "uid": ev.uid,
        "pfn": ev.pfn,
        "launch": ev.launch,
        "write": ev.write,
        "payload": base64.b64encode(ev.payload).decode("ascii") if ev.payload else None,
    }


def event_from_json(obj):
    try:
        kind = _KIND_BY_NAME[obj["kind"]]
        payload = obj.get("payload")
        return TraceEvent(
            seq=int(obj["seq"]),
            kind=kind,
            uid=int(obj["uid"]),
            pfn=int(obj.get("pfn", 0)),
            launch=int(obj.get("launch", 0)),
            write=bool(obj.get("write", False)),
            payload=base64.b64decode(payload) if payload else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"bad JSONL event {obj!r:.80}: {exc}") from exc


def export_jsonl(events, sink):
    n = 0
    for ev in events:
        sink.write(json.dumps(event_to_json(ev), separators=(",", ":")) + "\n")
        n += 1
    return n


def import_jsonl(source):
    events = []
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from exc
        events.append(event_from_json(obj))
    return events


def check_windows(events):
    """Linear scan for launch-window well-formedness and dense, increasing seq.

    Returns a list of problems (empty when the trace is well formed).
    """
    problems = []
    open_windows = {}
    last_launch = {}
    prev = None
    for ev in events:
        if prev is not None and ev.seq != prev + 1:
            problems.append(f"seq {ev.seq} follows {prev}")
        prev = ev.seq
        if ev.kind == Kind.LAUNCH_BEGIN:
            if ev.uid in open_windows:
                problems.append(f"seq {ev.seq}: uid {ev.uid} launch {ev.launch} while window open")
            expected = last_launch.get(ev.uid, -1) + 1
            if ev.launch != expected:
                problems.append(f"seq {ev.seq}: uid {ev.uid} launch {ev.launch}, expected {expected}")
            open_windows[ev.uid] = ev.launch
            last_launch[ev.uid] = ev.launch
        elif ev.kind == Kind.LAUNCH_END:
            if open_windows.pop(ev.uid, None) is None:
                problems.append(f"seq {ev.seq}: launch end for uid {ev.uid} without begin")
    for uid, k in open_windows.items():
        problems.append(f"uid {uid} launch {k} never ended")
    return problems

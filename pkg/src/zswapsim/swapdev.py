"""Flash swap space for compressed extents, kept as an append-only log.

Layout: ``b"ASWD"``, u16 version, then records

    u8 op | u64 slot | u32 length | u16 meta length | meta (JSON) | payload | u32 CRC32C

where op 1 stores ``length`` payload bytes (the extent's chunks in wire form)
and op 2 frees the slot (length 0, no meta). The CRC covers everything in the
record before it. Reopening replays the log to rebuild the slot index.
"""

import io
import json
import struct
from dataclasses import dataclass

import crc32c

from .codec import chunks_from_wire, chunks_to_wire
from .errors import CapacityError, DataError, LookupFailure
from .trace import PageId
from .zpool import INFLIGHT, SWAP, CompressedExtent

MAGIC = b"ASWD"
VERSION = 1
_HEAD = struct.Struct("<4sH")
_REC = struct.Struct("<BQIH")
_CRC = struct.Struct("<I")
OP_PUT = 1
OP_FREE = 2


@dataclass(frozen=True)
class SwapSlot:
    slot: int
    length: int
    extent_id: int


def _meta(extent):
    return json.dumps({
        "extent": extent.extent_id,
        "chunk_class": extent.chunk_class,
        "level": extent.level,
        "created_seq": extent.created_seq,
        "members": [[p.uid, p.pfn, start, length] for p, start, length in extent.members],
    }, sort_keys=True, separators=(",", ":")).encode()


def _extent_from(meta, payload):
    m = json.loads(meta)
    return CompressedExtent(
        extent_id=m["extent"],
        members=[(PageId(u, pfn), start, length) for u, pfn, start, length in m["members"]],
        chunk_class=m["chunk_class"],
        chunks=chunks_from_wire(payload),
        level=m["level"],
        created_seq=m["created_seq"],
    )


class SwapDevice:
    """Slot-addressed store of extents; ``capacity`` of None means unbounded."""

    def __init__(self, path=None, capacity=None):
        self.capacity = capacity
        self.path = path
        self.next_slot = 0
        self.live = {}  # slot -> (file offset of payload, length, meta bytes)
        self.live_bytes = 0
        self.write_bytes = 0
        self.read_bytes = 0
        self.write_ops = 0
        self.read_ops = 0
        if path is None:
            self._fh = io.BytesIO()
            self._fh.write(_HEAD.pack(MAGIC, VERSION))
        else:
            try:
                self._fh = open(path, "r+b")
            except FileNotFoundError:
                self._fh = open(path, "w+b")
                self._fh.write(_HEAD.pack(MAGIC, VERSION))
            else:
                self._replay()

    @classmethod
    def open(cls, path, capacity=None):
        return cls(path, capacity)

    def _replay(self):
        fh = self._fh
        fh.seek(0)
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size or _HEAD.unpack(head)[0] != MAGIC:
            raise DataError("not a swap device log (bad magic)")
        if _HEAD.unpack(head)[1] != VERSION:
            raise DataError(f"unsupported swap log version {_HEAD.unpack(head)[1]}")
        pos = _HEAD.size
        while True:
            rec = fh.read(_REC.size)
            if not rec:
                break
            if len(rec) < _REC.size:
                raise DataError(f"truncated swap record at offset {pos}")
            op, slot, length, mlen = _REC.unpack(rec)
            body = fh.read(mlen + length)
            crc = fh.read(_CRC.size)
            if len(body) < mlen + length or len(crc) < _CRC.size:
                raise DataError(f"truncated swap record at offset {pos}")
            if crc32c.crc32c(rec + body) != _CRC.unpack(crc)[0]:
                raise DataError(f"swap record checksum mismatch at offset {pos}")
            if op == OP_PUT:
                self.live[slot] = (pos + _REC.size + mlen, length, body[:mlen])
                self.live_bytes += length
            elif op == OP_FREE:
                _, length, _ = self.live.pop(slot)
                self.live_bytes -= length
            else:
                raise DataError(f"unknown swap op {op} at offset {pos}")
            self.next_slot = max(self.next_slot, slot + 1)
            pos += _REC.size + mlen + len(body) - mlen + _CRC.size
        fh.seek(0, io.SEEK_END)

    def _append(self, op, slot, meta=b"", payload=b""):
        fh = self._fh
        fh.seek(0, io.SEEK_END)
        rec = _REC.pack(op, slot, len(payload), len(meta))
        start = fh.tell()
        fh.write(rec + meta + payload + _CRC.pack(crc32c.crc32c(rec + meta + payload)))
        return start + _REC.size + len(meta)

    def swap_out(self, extent):
        if extent.location != INFLIGHT:
            raise DataError(f"extent {extent.extent_id} must leave the zpool before swap-out")
        payload = chunks_to_wire(extent.chunks)
        length = len(payload)
        if self.capacity is not None and self.live_bytes + length > self.capacity:
            raise CapacityError(self.live_bytes + length - self.capacity)
        slot = self.next_slot
        self.next_slot += 1
        meta = _meta(extent)
        offset = self._append(OP_PUT, slot, meta, payload)
        self.live[slot] = (offset, length, meta)
        self.live_bytes += length
        self.write_bytes += length
        self.write_ops += 1
        extent.location = SWAP
        extent.slot = slot
        return SwapSlot(slot, length, extent.extent_id)

    def peek(self, slot):
        """Read an extent back without freeing the slot."""
        entry = self.live.get(slot)
        if entry is None:
            raise LookupFailure(f"swap slot {slot} is not live")
        offset, length, meta = entry
        self._fh.seek(offset)
        payload = self._fh.read(length)
        self._fh.seek(0, io.SEEK_END)
        return _extent_from(meta, payload)

    def swap_in(self, slot):
        extent = self.peek(slot)
        length = self.live.pop(slot)[1]
        self.live_bytes -= length
        self.read_bytes += length
        self.read_ops += 1
        self._append(OP_FREE, slot)
        return extent

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __len__(self):
        return len(self.live)

    def __contains__(self, slot):
        return slot in self.live

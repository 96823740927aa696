"""The in-DRAM compressed store: extents packed into 4 KB blocks addressed by sector."""

import json
from dataclasses import dataclass, field

from sortedcontainers import SortedList

from .codec import compress, decompress, wire_size
from .errors import CapacityError, DataError, LookupFailure
from .sizes import PAGE_SIZE, check_chunk_class

BLOCK_SIZE = 4096

INFLIGHT = "inflight"
ZPOOL = "zpool"
SWAP = "swap"


@dataclass
class CompressedExtent:
    extent_id: int
    members: list  # [(PageId, start, length)] ranges of the uncompressed data
    chunk_class: int
    chunks: list
    level: object = None  # hotness label ("hot"/"warm"/"cold") at compression time, or None
    created_seq: int = 0
    location: str = INFLIGHT
    sectors: tuple = None  # (first, last) while in the zpool
    slot: int = None  # while on the swap device

    @property
    def total_bytes(self):
        return wire_size(self.chunks)

    @property
    def original_bytes(self):
        return sum(c.length for c in self.chunks)

    @property
    def pages(self):
        return [m[0] for m in self.members]

    def check(self):
        covered = 0
        for _, start, length in self.members:
            if start != covered:
                raise DataError(f"extent {self.extent_id}: member ranges do not tile")
            covered += length
        if covered != self.original_bytes:
            raise DataError(f"extent {self.extent_id}: members cover {covered}, chunks {self.original_bytes}")


def build_extent(extent_id, pages, chunk_class, level=None, created_seq=0, counters=None):
    """Compress ``pages`` ([(PageId, payload)]) into one extent.

    Classes below a page take exactly one page; a class of a page or more packs
    the pages back to back and cuts the run into ``chunk_class`` pieces.
    """
    check_chunk_class(chunk_class)
    if not pages:
        raise ValueError("an extent needs at least one page")
    if chunk_class < PAGE_SIZE and len(pages) != 1:
        raise ValueError("sub-page chunk classes hold exactly one page")
    data = b"".join(p for _, p in pages)
    chunks = compress(data, chunk_class)
    if counters is not None:
        counters.record_compress(chunks, level)
    members = [(pid, i * PAGE_SIZE, PAGE_SIZE) for i, (pid, _) in enumerate(pages)]
    return CompressedExtent(extent_id, members, chunk_class, chunks, level, created_seq)


def split_extent(extent, wanted, new_id, counters=None, created_seq=None):
    """Decode the whole extent; return (wanted pages, remainder extent or None).

    The remainder keeps the chunk class and level and is left in flight. Counters
    record the full decode, the wasted bytes and the merge-back compression.
    """
    data = decompress(extent.chunks)
    if counters is not None:
        counters.record_decompress(extent.chunks, extent.level)
    out = {}
    rest = []
    for pid, start, length in extent.members:
        payload = data[start:start + length]
        if pid in wanted:
            out[pid] = payload
        else:
            rest.append((pid, payload))
    missing = set(wanted) - set(out)
    if missing:
        raise LookupFailure(f"extent {extent.extent_id} does not hold {sorted(map(str, missing))}")
    remainder = None
    if rest:
        if counters is not None:
            counters.wasted_decompress_bytes += PAGE_SIZE * len(rest)
            counters.merge_back_ops += 1
        remainder = build_extent(new_id, rest, extent.chunk_class, extent.level,
                                 extent.created_seq if created_seq is None else created_seq,
                                 counters)
    return out, remainder


class _GapTree:
    """Max segment tree over sectors: the largest hole in each partially filled block."""

    def __init__(self, n):
        size = 1
        while size < max(n, 1):
            size *= 2
        self.size = size
        self.gap = [0] * (2 * size)

    def set(self, i, gap):
        v = self.size + i
        self.gap[v] = gap
        v //= 2
        while v:
            g = max(self.gap[2 * v], self.gap[2 * v + 1])
            if self.gap[v] == g:
                break
            self.gap[v] = g
            v //= 2

    def first_fit(self, length, lo=0):
        """Lowest sector >= ``lo`` whose hole holds ``length`` bytes, or None."""
        if self.gap[1] < length:
            return None
        if lo <= 0:
            v = 1
            while v < self.size:
                v = 2 * v if self.gap[2 * v] >= length else 2 * v + 1
            return v - self.size
        return self._from(1, 0, self.size, lo, length)

    def _from(self, v, a, b, lo, length):
        if b <= lo or self.gap[v] < length:
            return None
        if v >= self.size:
            return v - self.size
        mid = (a + b) // 2
        hit = self._from(2 * v, a, mid, lo, length)
        if hit is None:
            hit = self._from(2 * v + 1, mid, b, lo, length)
        return hit


class _RunTree:
    """Segment tree over sectors answering "first run of k empty sectors"."""

    def __init__(self, n):
        size = 1
        while size < max(n, 1):
            size *= 2
        self.size = size
        self.pre = [0] * (2 * size)
        self.suf = [0] * (2 * size)
        self.best = [0] * (2 * size)
        self.span = [0] * (2 * size)
        for i in range(size):
            leaf = size + i
            self.span[leaf] = 1
            if i < n:
                self.pre[leaf] = self.suf[leaf] = self.best[leaf] = 1
        for v in range(size - 1, 0, -1):
            self._pull(v)

    def _pull(self, v):
        l, r = 2 * v, 2 * v + 1
        self.span[v] = self.span[l] + self.span[r]
        self.pre[v] = self.pre[l] if self.pre[l] < self.span[l] else self.span[l] + self.pre[r]
        self.suf[v] = self.suf[r] if self.suf[r] < self.span[r] else self.span[r] + self.suf[l]
        self.best[v] = max(self.best[l], self.best[r], self.suf[l] + self.pre[r])

    def set(self, i, empty):
        v = self.size + i
        e = 1 if empty else 0
        self.pre[v] = self.suf[v] = self.best[v] = e
        v //= 2
        while v:
            self._pull(v)
            v //= 2

    def first_run(self, k):
        if self.best[1] < k:
            return None
        v, lo = 1, 0
        while v < self.size:
            l, r = 2 * v, 2 * v + 1
            if self.best[l] >= k:
                v = l
            elif self.suf[l] + self.pre[r] >= k:
                return lo + self.span[l] - self.suf[l]
            else:
                lo += self.span[l]
                v = r
        return lo


@dataclass
class ZpoolBlock:
    sector: int
    owner: object = None
    occupants: list = field(default_factory=list)  # sorted [(offset, length, extent_id)]

    @property
    def used(self):
        return sum(o[1] for o in self.occupants)

    @property
    def free_bytes(self):
        return BLOCK_SIZE - self.used

    def gaps(self):
        pos = 0
        for off, length, _ in self.occupants:
            if off > pos:
                yield pos, off - pos
            pos = off + length
        if pos < BLOCK_SIZE:
            yield pos, BLOCK_SIZE - pos

    def largest_gap(self):
        return max((g for _, g in self.gaps()), default=0)


def extent_owner(extent):
    return extent.members[0][0].uid


class Zpool:
    """Extents packed into 4 KB blocks.

    An extent up to one block goes into the lowest-numbered partially filled
    block with a big enough hole, else into the first empty sector. Larger
    extents take the first run of consecutive empty sectors.

    With ``per_app=True`` a block only ever holds extents of one app, and small
    extents are placed next-fit: the search starts at the sector the app wrote
    last, so extents compressed one after another sit at ascending sectors.
    """

    def __init__(self, capacity, per_app=False):
        if capacity < 0 or capacity % BLOCK_SIZE:
            raise DataError(f"zpool capacity {capacity} is not a multiple of {BLOCK_SIZE}")
        self.capacity = capacity
        self.nsectors = capacity // BLOCK_SIZE
        self.per_app = per_app
        self.blocks = {}
        self.extents = {}
        self.placements = {}  # extent id -> [(sector, offset, length)]
        self.used_bytes = 0
        self._runs = _RunTree(self.nsectors)
        self._gaps = {}  # owner key -> _GapTree of partially filled blocks
        self._empty = _GapTree(self.nsectors)  # 1 for every empty sector
        for i in range(self.nsectors):
            self._empty.gap[self._empty.size + i] = 1
        for v in range(self._empty.size - 1, 0, -1):
            self._empty.gap[v] = max(self._empty.gap[2 * v], self._empty.gap[2 * v + 1])
        self._cursor = {}  # owner -> last sector written (per-app mode)
        self._starts = SortedList()  # (address, extent id)

    def __contains__(self, extent_id):
        return extent_id in self.extents

    def __len__(self):
        return len(self.extents)

    @property
    def free_bytes(self):
        return self.capacity - self.used_bytes

    def _key(self, extent):
        return extent_owner(extent) if self.per_app else None

    def _gap_tree(self, key):
        tree = self._gaps.get(key)
        if tree is None:
            tree = self._gaps[key] = _GapTree(self.nsectors)
        return tree

    def _refresh(self, sector):
        block = self.blocks[sector]
        tree = self._gap_tree(block.owner)
        if not block.occupants:
            del self.blocks[sector]
            tree.set(sector, 0)
            self._runs.set(sector, True)
            self._empty.set(sector, 1)
        else:
            tree.set(sector, block.largest_gap())
            self._runs.set(sector, False)
            self._empty.set(sector, 0)

    def _occupy(self, sector, offset, length, extent_id, key):
        block = self.blocks.get(sector)
        if block is None:
            block = self.blocks[sector] = ZpoolBlock(sector, key)
        block.occupants.append((offset, length, extent_id))
        block.occupants.sort()
        self._refresh(sector)

    def _next_fit(self, key, size, lo):
        """First sector at or after ``lo`` that is empty or an own block with room."""
        own = self._gap_tree(key).first_fit(size, lo)
        empty = self._empty.first_fit(1, lo)
        found = [x for x in (own, empty) if x is not None]
        return min(found) if found else None

    def put(self, extent):
        """Place an in-flight extent; returns (first sector, last sector)."""
        if extent.location != INFLIGHT:
            raise DataError(f"extent {extent.extent_id} is not in flight ({extent.location})")
        if extent.extent_id in self.extents:
            raise DataError(f"extent id {extent.extent_id} already stored")
        size = extent.total_bytes
        if size > self.free_bytes:
            raise CapacityError(size - self.free_bytes)
        key = self._key(extent)
        placement = []
        if size <= BLOCK_SIZE:
            if self.per_app:
                sector = self._next_fit(key, size, self._cursor.get(key, 0))
                if sector is None:
                    sector = self._next_fit(key, size, 0)
            else:
                sector = self._gap_tree(key).first_fit(size)
                if sector is None:
                    sector = self._runs.first_run(1)
            if sector is None:
                raise CapacityError(0, f"no hole of {size} bytes (fragmented zpool)")
            block = self.blocks.get(sector)
            offset = 0 if block is None else next(off for off, g in block.gaps() if g >= size)
            placement.append((sector, offset, size))
        else:
            n = -(-size // BLOCK_SIZE)
            first = self._runs.first_run(n)
            if first is None:
                raise CapacityError(0, f"no run of {n} empty sectors (fragmented zpool)")
            left = size
            for s in range(first, first + n):
                take = min(BLOCK_SIZE, left)
                placement.append((s, 0, take))
                left -= take
        for sector, offset, length in placement:
            self._occupy(sector, offset, length, extent.extent_id, key)
        self._cursor[key] = placement[-1][0]
        self.extents[extent.extent_id] = extent
        self.placements[extent.extent_id] = placement
        self.used_bytes += size
        self._starts.add((placement[0][0] * BLOCK_SIZE + placement[0][1], extent.extent_id))
        extent.location = ZPOOL
        extent.sectors = (placement[0][0], placement[-1][0])
        return extent.sectors

    def remove(self, extent_id):
        """Drop an extent; returns the freed byte count. The extent is left in flight."""
        return self.take(extent_id).total_bytes

    def take(self, extent_id):
        extent = self.extents.pop(extent_id, None)
        if extent is None:
            raise LookupFailure(f"extent {extent_id} is not in the zpool")
        placement = self.placements.pop(extent_id)
        for sector, offset, length in placement:
            self.blocks[sector].occupants.remove((offset, length, extent_id))
            self._refresh(sector)
        self.used_bytes -= extent.total_bytes
        self._starts.remove((placement[0][0] * BLOCK_SIZE + placement[0][1], extent_id))
        extent.location = INFLIGHT
        extent.sectors = None
        return extent

    def start_address(self, extent_id):
        sector, offset, _ = self.placements[extent_id][0]
        return sector * BLOCK_SIZE + offset

    def successor(self, address, last_sector):
        """The extent stored right after ``address`` if it starts by ``last_sector + 1``."""
        i = self._starts.bisect_right((address, float("inf")))
        if i >= len(self._starts):
            return None
        addr, eid = self._starts[i]
        if addr // BLOCK_SIZE > last_sector + 1:
            return None
        return self.extents[eid]

    def extract(self, extent_id, wanted, new_id, counters=None):
        """Decode an extent for ``wanted`` pages and merge the rest back into the pool."""
        extent = self.take(extent_id)
        pages, remainder = split_extent(extent, set(wanted), new_id, counters)
        if remainder is not None:
            self.put(remainder)
        return pages, remainder

    def usage(self):
        live = len(self.blocks)
        span = live * BLOCK_SIZE
        return {
            "used_bytes": self.used_bytes,
            "free_bytes": self.capacity - self.used_bytes,
            "live_blocks": live,
            "free_in_live_blocks": span - self.used_bytes,
            "fragmentation": (1 - self.used_bytes / span) if span else 0.0,
        }

    def check(self):
        occupied = sum(b.used for b in self.blocks.values())
        live = sum(e.total_bytes for e in self.extents.values())
        assert occupied == live == self.used_bytes, (occupied, live, self.used_bytes)
        for b in self.blocks.values():
            assert b.occupants, b.sector
            pos = 0
            for off, length, _ in b.occupants:
                assert off >= pos, f"overlap in sector {b.sector}"
                pos = off + length
            assert pos <= BLOCK_SIZE
            if self.per_app:
                assert all(extent_owner(self.extents[e]) == b.owner for _, _, e in b.occupants)
        for eid, placement in self.placements.items():
            sectors = [p[0] for p in placement]
            assert sectors == list(range(sectors[0], sectors[0] + len(sectors))), eid

    def snapshot(self):
        return {
            "capacity": self.capacity,
            "used_bytes": self.used_bytes,
            "blocks": [
                {"sector": s, "free": b.free_bytes,
                 "occupants": [{"extent": e, "offset": o, "length": ln} for o, ln, e in b.occupants]}
                for s, b in sorted(self.blocks.items())
            ],
        }

    def dump_json(self):
        return json.dumps(self.snapshot(), sort_keys=True)

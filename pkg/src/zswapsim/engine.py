"""The replay state machine: resident memory, zpool and swap, driven by trace events.

Every page lives in exactly one place: resident memory or one compressed extent
(in the zpool or on the swap device). The ``where`` map records which. The
pre-decompression buffer only holds copies of pages whose extent is still in
the zpool; using a copy removes the page from its extent.
"""

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields

from .codec import decompress
from .errors import CapacityError, DataError, FaultError, ProtocolError
from .hotness import HotnessState, Level
from .metrics import CPU_NOTE, CostModel, Counters, report_totals
from .sizes import PAGE_SIZE, check_chunk_class, format_size_triple, parse_size, parse_size_triple
from .swapdev import SwapDevice
from .trace import Kind, encode_record
from .zpool import SWAP, ZPOOL, Zpool, build_extent, split_extent

ZRAM = "zram"
ADAPTIVE = "adaptive"
SCHEME_ALIASES = {"ariadne": ADAPTIVE, "hotness": ADAPTIVE, "baseline": ZRAM}
AL = "al"
EHL = "ehl"

RESIDENT = "resident"
BUFFER = "buffer"

ZERO_PAGE = bytes(PAGE_SIZE)


@dataclass
class SchemeConfig:
    scheme: str = ADAPTIVE
    scenario: str = AL
    sizes: tuple = (1024, 2048, 16384)
    mem: int = 64 << 20
    zpool: int = 32 << 20
    buffer_pages: int = 4
    low_watermark: int = None  # free bytes below which reclaim starts
    high_watermark: int = None  # free bytes reclaim restores
    swap_capacity: int = None
    swap_path: str = None

    def __post_init__(self):
        self.scheme = SCHEME_ALIASES.get(self.scheme.lower(), self.scheme.lower())
        self.scenario = self.scenario.lower()
        if isinstance(self.sizes, str):
            self.sizes = parse_size_triple(self.sizes)
        self.sizes = tuple(int(s) for s in self.sizes)
        for name in ("mem", "zpool", "low_watermark", "high_watermark", "swap_capacity"):
            v = getattr(self, name)
            if isinstance(v, str):
                setattr(self, name, parse_size(v))
        self.validate()

    def validate(self):
        if self.scheme not in (ZRAM, ADAPTIVE):
            raise DataError(f"scheme must be {ZRAM!r} or {ADAPTIVE!r}, not {self.scheme!r}")
        if self.scenario not in (AL, EHL):
            raise DataError(f"scenario must be {AL!r} or {EHL!r}, not {self.scenario!r}")
        if len(self.sizes) != 3:
            raise DataError("sizes must be a small-medium-large triple")
        for s in self.sizes:
            check_chunk_class(s)
        if self.mem < PAGE_SIZE:
            raise DataError("main memory must hold at least one page")
        if self.zpool % PAGE_SIZE:
            raise DataError("zpool capacity must be a multiple of 4096")
        if self.buffer_pages < 0:
            raise DataError("buffer pages must be >= 0")
        low, high = self.watermarks()
        if not 0 < low <= high <= self.mem_pages:
            raise DataError(f"watermarks need 0 < low <= high <= memory (pages: {low}, {high})")

    @property
    def mem_pages(self):
        return self.mem // PAGE_SIZE

    def watermarks(self):
        """(low, high) in pages of free memory."""
        pages = self.mem_pages
        low = self.low_watermark // PAGE_SIZE if self.low_watermark is not None else max(1, pages // 128)
        high = (self.high_watermark // PAGE_SIZE if self.high_watermark is not None
                else max(low + 1, pages // 64))
        return low, min(high, pages)

    @property
    def label(self):
        if self.scheme == ZRAM:
            return "zram"
        return f"adaptive-{self.scenario}-{format_size_triple(self.sizes)}"

    def to_dict(self):
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class RelaunchReport:
    uid: int
    launch: int
    modeled_latency_ns: float = 0.0
    pages_faulted: int = 0
    sources: dict = field(default_factory=lambda: {RESIDENT: 0, "predecomp-buffer": 0, ZPOOL: 0, SWAP: 0})
    decompress_cost_ns: float = 0.0
    compress_cost_ns: float = 0.0
    waste_bytes: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class FaultResolution:
    source: str
    charged_ns: float
    decompress_ns: float = 0.0
    compress_ns: float = 0.0
    waste_bytes: int = 0


def trace_id(events):
    h = hashlib.sha256()
    for ev in events:
        h.update(encode_record(ev))
    return h.hexdigest()


class Engine:
    def __init__(self, config, model=None, audit=True, debug=False):
        self.config = config
        self.model = model or CostModel()
        self.debug = debug
        self.adaptive = config.scheme == ADAPTIVE
        self.capacity = config.mem_pages
        self.low, self.high = config.watermarks()
        self.counters = Counters()
        self.zpool = Zpool(config.zpool, per_app=self.adaptive)
        self.swap = SwapDevice(config.swap_path, config.swap_capacity)
        self.hotness = HotnessState(debug=debug) if self.adaptive else None
        self.where = {}  # PageId -> RESIDENT or extent id
        self.resident = OrderedDict()  # PageId -> payload, least recently used first
        self.buffer = OrderedDict()  # PageId -> (copy, address, last sector), FIFO
        self.extents = {}  # extent id -> CompressedExtent, zpool or swap
        self.zpool_order = {lv: OrderedDict() for lv in ("cold", "warm", "hot", None)}
        self.next_extent = 0
        self.last_seq = None
        self.audit = [] if audit else None
        self.windows = {}  # uid -> open RelaunchReport
        self.relaunches = []
        self.oom_events = 0
        self.victim_log = []  # (seq, PageId) in compression order
        self.swapped_out_bytes = 0
        self._seq = None
        self._charge = None  # RelaunchReport receiving charges for the current event

    # -- helpers -------------------------------------------------------------

    def _log(self, action, uid=None, pfn=None, level=None, sector=None, nbytes=None, ns=0.0):
        if self.audit is not None:
            self.audit.append({"seq": self._seq, "action": action, "uid": uid, "pfn": pfn,
                               "level": level, "sector": sector, "bytes": nbytes, "ns": ns})

    def _new_id(self):
        eid = self.next_extent
        self.next_extent += 1
        return eid

    @property
    def used_pages(self):
        return len(self.resident) + len(self.buffer)

    @property
    def free_pages(self):
        return self.capacity - self.used_pages

    def _level_of(self, page):
        if not self.adaptive:
            return None
        return self.hotness.level[page].label

    def _class_for(self, level):
        if not self.adaptive:
            return PAGE_SIZE
        small, medium, large = self.config.sizes
        return {"hot": small, "warm": medium, "cold": large}[level]

    def _make_resident(self, page, payload):
        self.where[page] = RESIDENT
        self.resident[page] = payload
        if self.adaptive:
            self.hotness.set_resident(page, True)

    # -- zpool / swap movement -----------------------------------------------

    def _zpool_take(self, eid):
        ext = self.zpool.take(eid)
        del self.zpool_order[ext.level][eid]
        return ext

    def _swap_victim(self):
        for lv in ("cold", "warm", "hot", None):
            order = self.zpool_order[lv]
            if order:
                return next(iter(order))
        return None

    def _evict_to_swap(self):
        """Move the coldest, oldest zpool extent to swap; returns flash-write ns or None."""
        eid = self._swap_victim()
        if eid is None:
            return None
        ext = self._zpool_take(eid)
        for page in ext.pages:
            if page in self.buffer:
                self._buffer_drop(page)
        try:
            slot = self.swap.swap_out(ext)
        except CapacityError:
            self.zpool.put(ext)
            self.zpool_order[ext.level][eid] = None
            return None
        self.counters.swap_out_ops += 1
        self.counters.swap_out_bytes += slot.length
        self.swapped_out_bytes += ext.total_bytes
        ns = self.model.flash_write_ns(slot.length)
        first = ext.members[0][0]
        self._log("swap-out", first.uid, first.pfn, ext.level, None, slot.length, ns)
        return ns

    def _store(self, ext):
        """Put an extent in the zpool, pushing older extents to swap as needed.

        Returns flash-write ns spent, or None when the extent does not fit anywhere.
        """
        spent = 0.0
        while True:
            if ext.total_bytes <= self.zpool.free_bytes:
                try:
                    self.zpool.put(ext)
                except CapacityError:
                    pass
                else:
                    self.zpool_order[ext.level][ext.extent_id] = None
                    self.extents[ext.extent_id] = ext
                    for page in ext.pages:
                        self.where[page] = ext.extent_id
                    return spent
            ns = self._evict_to_swap()
            if ns is None:
                return None
            spent += ns

    def _oom(self, uid=None, pfn=None, level=None):
        self.counters.oom_reports += 1
        self.oom_events += 1
        self._log("oom", uid, pfn, level)

    # -- events --------------------------------------------------------------

    def step(self, ev):
        if self.last_seq is not None and ev.seq <= self.last_seq:
            raise ProtocolError(f"event seq {ev.seq} after {self.last_seq}")
        self.last_seq = ev.seq
        self._seq = ev.seq
        kind = ev.kind
        if kind == Kind.TOUCH:
            self._touch(ev)
        elif kind == Kind.LAUNCH_BEGIN:
            self._launch_begin(ev)
        elif kind == Kind.LAUNCH_END:
            self._launch_end(ev)
        elif kind == Kind.FOREGROUND:
            if self.adaptive:
                self.hotness.app(ev.uid)
                self.hotness.foreground = ev.uid
            self._log("foreground", ev.uid)
        else:
            raise ProtocolError(f"unknown event kind {kind}")
        if self.debug:
            self.check()

    def _launch_begin(self, ev):
        if ev.uid in self.windows:
            raise ProtocolError(f"uid {ev.uid}: launch {ev.launch} begins inside an open window")
        self.windows[ev.uid] = RelaunchReport(ev.uid, ev.launch)
        self._log("launch", ev.uid, None, None, None, None, 0.0)
        if self.adaptive:
            self.hotness.begin_window(ev.uid, ev.launch)
            for page in reversed(self.hotness.apps[ev.uid].lists[Level.HOT]):
                self._log("hotlist", ev.uid, page.pfn, "hot")

    def _launch_end(self, ev):
        report = self.windows.pop(ev.uid, None)
        if report is None:
            raise ProtocolError(f"uid {ev.uid}: launch end with no open window")
        self.relaunches.append(report)
        if self.adaptive:
            moved = self.hotness.on_relaunch_end(ev.uid)
            self._log("rotate", ev.uid, None, "hot", None, moved["promoted"], 0.0)

    def _touch(self, ev):
        page = ev.page
        report = self.windows.get(ev.uid)
        self._charge = report
        where = self.where.get(page)
        cost = self.model.dram_copy_ns_per_page
        if where is None:
            if self.adaptive:
                self.hotness.touch(page, report is not None, resident=False)
            self._make_resident(page, ev.payload if ev.payload is not None else ZERO_PAGE)
            source = RESIDENT
        elif where == RESIDENT:
            self.resident.move_to_end(page)
            if self.adaptive:
                self.hotness.touch(page, report is not None)
            source = RESIDENT
        else:
            res = self.handle_fault(page, report is not None)
            cost += res.charged_ns
            source = res.source
            if report is not None:
                report.decompress_cost_ns += res.decompress_ns
                report.compress_cost_ns += res.compress_ns
                report.waste_bytes += res.waste_bytes
        if ev.payload is not None and where is not None:
            self.resident[page] = ev.payload
        if report is not None:
            report.modeled_latency_ns += cost
            report.pages_faulted += 1
            report.sources[source] += 1
        if self.free_pages < self.low:
            self.reclaim(self.high - self.free_pages)
        self._charge = None

    # -- faults --------------------------------------------------------------

    def handle_fault(self, page, during_relaunch=False):
        """Bring a non-resident page back; returns the FaultResolution."""
        where = self.where.get(page)
        if where is None or where == RESIDENT:
            raise FaultError(f"page {page} is not a known non-resident page")
        self.counters.demand_faults += 1
        ext = self.extents.pop(where)
        if page in self.buffer:
            return self._buffer_hit(page, ext, during_relaunch)

        ns = 0.0
        source = ext.location
        if ext.location == SWAP:
            ext = self.swap.swap_in(ext.slot)
            self.counters.swap_in_ops += 1
            self.counters.swap_in_bytes += ext.total_bytes
            read_ns = self.model.flash_read_ns(ext.total_bytes)
            ns += read_ns
            self._log("swap-in", page.uid, page.pfn, ext.level, None, ext.total_bytes, read_ns)
            address = last = sector = None
        else:
            address = self.zpool.start_address(ext.extent_id)
            sector, last = ext.sectors
            self._zpool_take(ext.extent_id)
        payload, d_ns, c_ns, spent = self._split(page, ext)
        ns += d_ns + c_ns + spent
        self._log("fault", page.uid, page.pfn, ext.level, sector, ext.total_bytes, d_ns)
        if self.adaptive:
            self.hotness.touch(page, during_relaunch, resident=False)
        self._make_resident(page, payload)
        if self.adaptive and address is not None:
            self.prefetch_next(address, last)
        return FaultResolution(source, ns, d_ns, c_ns, PAGE_SIZE * (len(ext.members) - 1))

    def _split(self, page, ext, payload=None):
        """Take ``page`` out of an in-flight extent and store the rest again.

        Returns (payload, decompress ns, merge-back compress ns, flash-write ns).
        With ``payload`` given and a single-page extent nothing needs decoding.
        """
        if payload is not None and len(ext.members) == 1:
            return payload, 0.0, 0.0, 0.0
        before = self.counters.compress_ops, self.counters.compress_bytes_in
        pages, remainder = split_extent(ext, {page}, self._new_id(), self.counters,
                                        created_seq=self._seq)
        d_ns = self.model.decompress_ns(len(ext.chunks), ext.original_bytes)
        c_ns = self.model.compress_ns(self.counters.compress_ops - before[0],
                                      self.counters.compress_bytes_in - before[1])
        spent = 0.0
        if remainder is not None:
            spent = self._store(remainder)
            if spent is None:
                spent = 0.0
                self._oom(page.uid, page.pfn, remainder.level)
                self._unpack(remainder)
            else:
                first = remainder.members[0][0]
                self._log("merge-back", first.uid, first.pfn, remainder.level,
                          remainder.sectors[0], remainder.total_bytes, c_ns)
        return pages[page], d_ns, c_ns, spent

    def _buffer_hit(self, page, ext, during_relaunch):
        payload, address, last = self.buffer.pop(page)
        self._zpool_take(ext.extent_id)
        # a multi-page extent still has to be decoded to re-pack its other pages
        payload, d_ns, c_ns, spent = self._split(page, ext, payload)
        if self.adaptive:
            self.hotness.touch(page, during_relaunch, resident=False)
        self._make_resident(page, payload)
        self.counters.prefetch_hit += 1
        self._log("buffer-hit", page.uid, page.pfn, ext.level, address // PAGE_SIZE,
                  ext.total_bytes, d_ns)
        self.prefetch_next(address, last)
        return FaultResolution("predecomp-buffer", d_ns + c_ns + spent, d_ns, c_ns,
                               PAGE_SIZE * (len(ext.members) - 1))

    def _unpack(self, ext):
        """Last resort when an extent fits nowhere: its pages stay resident (over capacity)."""
        data = decompress(ext.chunks)
        for pid, start, length in ext.members:
            self._make_resident(pid, data[start:start + length])

    # -- pre-decompression ---------------------------------------------------

    def prefetch_next(self, address, last_sector):
        """Decode the extent stored right after ``address`` and buffer its first page.

        The compressed extent stays where it is; the buffer holds a decompressed
        copy that a later fault can use without decoding.
        """
        if not self.adaptive or self.config.buffer_pages == 0:
            return False
        nxt = self.zpool.successor(address, last_sector)
        if nxt is None:
            return False
        first = nxt.members[0][0]
        if first in self.buffer:
            return False
        n_address = self.zpool.start_address(nxt.extent_id)
        data = decompress(nxt.chunks)
        self.counters.record_decompress(nxt.chunks, nxt.level)
        self.counters.prefetch_issued += 1
        d_ns = self.model.decompress_ns(len(nxt.chunks), nxt.original_bytes)
        self._log("prefetch", first.uid, first.pfn, nxt.level, n_address // PAGE_SIZE,
                  nxt.total_bytes, d_ns)
        while len(self.buffer) >= self.config.buffer_pages:
            self._buffer_drop(next(iter(self.buffer)))
        self.buffer[first] = (data[:PAGE_SIZE], n_address, nxt.sectors[1])
        return True

    def _buffer_drop(self, page):
        """Discard an unused prefetched copy (FIFO eviction or its extent left the zpool)."""
        _, address, _ = self.buffer.pop(page)
        self.counters.prefetch_wasted += 1
        self.counters.wasted_decompress_bytes += PAGE_SIZE
        self._log("buffer-evict", page.uid, page.pfn, self._level_of(page), address // PAGE_SIZE,
                  PAGE_SIZE, 0.0)

    # -- reclaim -------------------------------------------------------------

    def _select(self, needed):
        if not self.adaptive:
            return [(p, None) for p, _ in zip(self.resident, range(needed))]
        large = self.config.sizes[2]
        group = {Level.COLD: large // PAGE_SIZE} if large > PAGE_SIZE else None
        exclude = (Level.HOT,) if self.config.scenario == EHL else ()
        return [(p, lv.label) for p, lv in self.hotness.select_victims(needed, exclude, group)]

    def _batches(self, victims):
        """Group victims into extents: cold pages of one app in runs of large/4096."""
        per = max(1, self.config.sizes[2] // PAGE_SIZE) if self.adaptive else 1
        batch = []
        for page, level in victims:
            if level == "cold" and per > 1:
                if batch and (batch[0][0].uid != page.uid or len(batch) == per):
                    yield batch, "cold"
                    batch = []
                batch.append((page, level))
                continue
            if batch:
                yield batch, "cold"
                batch = []
            yield [(page, level)], level
        if batch:
            yield batch, "cold"

    def reclaim(self, needed):
        """Compress at least ``needed`` resident pages; returns the charged ns."""
        if needed <= 0:
            return 0.0
        self.counters.reclaim_invocations += 1
        lowest = None
        if self.adaptive:
            exclude = (Level.HOT,) if self.config.scenario == EHL else ()
            lv = self.hotness.lowest_resident_level(exclude)
            lowest = lv.label if lv is not None else None
        self._log("reclaim", None, None, lowest, None, needed * PAGE_SIZE, 0.0)
        victims = self._select(needed)
        total_ns = 0.0
        compress_ns = 0.0
        freed = 0
        stuck = False
        for batch, level in self._batches(victims):
            pages = [(p, self.resident[p]) for p, _ in batch]
            ext = build_extent(self._new_id(), pages, self._class_for(level), level,
                               self._seq, self.counters)
            c_ns = self.model.compress_ns(len(ext.chunks), ext.original_bytes)
            for p, _ in batch:
                del self.resident[p]
                if self.adaptive:
                    self.hotness.set_resident(p, False)
            spent = self._store(ext)
            if spent is None:
                for p, payload in pages:
                    self._make_resident(p, payload)
                self._oom(batch[0][0].uid, batch[0][0].pfn, level)
                total_ns += c_ns
                compress_ns += c_ns
                stuck = True
                break
            total_ns += c_ns + spent
            compress_ns += c_ns
            freed += len(batch)
            for i, (p, _) in enumerate(batch):
                self.victim_log.append((self._seq, p))
                self._log("compress", p.uid, p.pfn, level, ext.sectors[0], ext.total_bytes,
                          c_ns if i == 0 else 0.0)
        if not stuck and len(victims) < needed:
            # nothing left that policy allows to compress
            self._oom(level=lowest)
        report = self._charge
        if report is not None:
            report.modeled_latency_ns += total_ns
            report.compress_cost_ns += compress_ns
        return total_ns

    # -- state checks and output --------------------------------------------

    def check(self):
        """Page conservation and byte accounting; raises AssertionError on violation."""
        seen = {}
        for p in self.resident:
            seen[p] = seen.get(p, 0) + 1
            assert self.where[p] == RESIDENT, p
        for p in self.buffer:
            # buffered copies shadow a page that still lives in its zpool extent
            assert self.extents[self.where[p]].location == ZPOOL, p
        swapped = 0
        for eid, ext in self.extents.items():
            ext.check()
            if ext.location == ZPOOL:
                assert eid in self.zpool, eid
            else:
                assert ext.location == SWAP and ext.slot in self.swap, eid
                swapped += 1
            for p in ext.pages:
                seen[p] = seen.get(p, 0) + 1
                assert self.where[p] == eid, p
        assert swapped == len(self.swap), "swap slots out of step with extents"
        assert len(self.zpool) + swapped == len(self.extents)
        dup = [p for p, n in seen.items() if n != 1]
        assert not dup, f"pages in more than one tier: {dup[:5]}"
        assert set(seen) == set(self.where), "pages lost between tiers"
        self.zpool.check()
        assert self.swap.write_bytes == self.counters.swap_out_bytes == self.swapped_out_bytes
        assert self.counters.prefetch_hit <= self.counters.prefetch_issued
        if self.adaptive:
            self.hotness.check()
            for p, lv in self.hotness.level.items():
                assert (p in self.hotness.apps[p.uid].resident[lv]) == (self.where[p] == RESIDENT), p

    def page_bytes(self, page):
        """Current contents of a page, wherever it lives (no state change)."""
        where = self.where[page]
        if where == RESIDENT:
            return self.resident[page]
        ext = self.extents[where]
        if ext.location == SWAP:
            ext = self.swap.peek(ext.slot)
        data = decompress(ext.chunks)
        for pid, start, length in ext.members:
            if pid == page:
                return data[start:start + length]
        raise FaultError(f"extent {where} lost page {page}")

    def tier_counts(self):
        zp = sum(len(e.members) for e in self.extents.values() if e.location == ZPOOL)
        sw = sum(len(e.members) for e in self.extents.values() if e.location == SWAP)
        return {RESIDENT: len(self.resident), BUFFER: len(self.buffer), ZPOOL: zp, SWAP: sw}

    def report(self, trace_hash=None):
        relaunches = [r.to_dict() for r in self.relaunches]
        return {
            "trace_id": trace_hash,
            "config": {"scheme": self.config.to_dict(), "label": self.config.label,
                       "cost_model": self.model.to_dict()},
            "counters": self.counters.to_dict(),
            "relaunches": relaunches,
            "totals": report_totals(relaunches, self.counters, self.model),
            "final": {"tiers": self.tier_counts(), "zpool": self.zpool.usage(),
                      "swap_live_bytes": self.swap.live_bytes, "oom_events": self.oom_events},
            "metadata": {"cpu": CPU_NOTE},
        }

    def audit_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.audit or ())


def replay(events, config, model=None, audit=True, debug=False):
    """Run a whole trace; returns the finished engine (see ``Engine.report``)."""
    engine = Engine(config, model, audit, debug)
    for ev in events:
        engine.step(ev)
    return engine


def dump_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"

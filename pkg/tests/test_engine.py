import numpy as np
import pytest

from zswapsim.engine import Engine, SchemeConfig, replay, trace_id
from zswapsim.errors import DataError, FaultError, ProtocolError
from zswapsim.metrics import CostModel
from zswapsim.trace import PageId, launch_begin, launch_end, touch
from zswapsim.zpool import SWAP

PAGE = 4096
RNG = np.random.default_rng(1)
PAYLOADS = [RNG.integers(0, 8, PAGE, dtype=np.uint8).tobytes() for _ in range(16)]


class Driver:
    """Feeds hand-written events to an engine with automatic seq numbers."""

    def __init__(self, **cfg):
        cfg.setdefault("mem", 64 * PAGE)
        cfg.setdefault("zpool", 64 * PAGE)
        self.eng = Engine(SchemeConfig(**cfg), debug=True)
        self.seq = 0

    def _next(self):
        self.seq += 1
        return self.seq - 1

    def touch(self, pfn, uid=1):
        new = PageId(uid, pfn) not in self.eng.where
        self.eng.step(touch(self._next(), uid, pfn, PAYLOADS[pfn % 16] if new else None))

    def launch(self, pfns, uid=1, k=0):
        self.eng.step(launch_begin(self._next(), uid, k))
        for p in pfns:
            self.touch(p, uid)
        self.eng.step(launch_end(self._next(), uid))

    def actions(self):
        return [r["action"] for r in self.eng.audit]


def test_out_of_order_seq():
    d = Driver()
    d.eng.step(touch(5, 1, 1))
    with pytest.raises(ProtocolError):
        d.eng.step(touch(5, 1, 2))


def test_resident_touch_has_no_fault():
    d = Driver()
    d.touch(1)
    d.touch(1)
    assert "fault" not in d.actions()
    assert d.eng.counters.demand_faults == 0


def test_launch_end_rotates():
    d = Driver()
    d.launch([1, 2])
    assert d.actions()[-1] == "rotate"


def test_fault_then_prefetch():
    d = Driver(buffer_pages=4)
    for p in (1, 2):
        d.touch(p)
        d.touch(p)  # warm
    d.eng.reclaim(2)
    d.touch(1)
    acts = d.actions()
    assert acts[acts.index("fault") + 1] == "prefetch"


def test_hot_page_at_1k_decodes_four_chunks():
    d = Driver(buffer_pages=0)
    d.launch([3])
    d.eng.reclaim(1)
    ext = d.eng.extents[d.eng.where[PageId(1, 3)]]
    assert (ext.chunk_class, len(ext.chunks)) == (1024, 4)
    before = d.eng.counters.decompress_ops
    d.touch(3)
    assert d.eng.counters.decompress_ops - before == 4
    assert all(c.length <= 1024 for c in ext.chunks)


def test_cold_extent_from_swap():
    d = Driver(buffer_pages=0)
    for p in range(4):
        d.touch(p)
    d.eng.reclaim(4)
    assert d.eng._evict_to_swap() is not None
    ext = d.eng.extents[d.eng.where[PageId(1, 0)]]
    assert ext.location == SWAP
    res = d.eng.handle_fault(PageId(1, 0))
    model = CostModel()
    assert res.source == SWAP
    assert d.eng.counters.swap_in_ops == 1
    assert d.eng.counters.merge_back_ops == 1
    assert res.waste_bytes == 3 * PAGE
    assert res.charged_ns >= model.flash_read_ns(ext.total_bytes) + res.decompress_ns + res.compress_ns
    assert d.eng.page_bytes(PageId(1, 0)) == PAYLOADS[0]
    assert d.eng.page_bytes(PageId(1, 3)) == PAYLOADS[3]


def test_baseline_two_single_page_extents():
    d = Driver(scheme="zram")
    for p in range(3):
        d.touch(p)
    d.eng.reclaim(2)
    exts = list(d.eng.extents.values())
    assert len(exts) == 2
    assert all(e.chunk_class == PAGE and len(e.members) == 1 for e in exts)
    assert [e.pages[0] for e in exts] == [PageId(1, 0), PageId(1, 1)]


def test_eight_cold_victims_make_two_extents():
    d = Driver()
    for p in range(10):
        d.touch(p)
    d.eng.reclaim(8)
    exts = list(d.eng.extents.values())
    assert [(len(e.members), e.chunk_class) for e in exts] == [(4, 16384), (4, 16384)]


def test_ehl_pins_hot_pages():
    d = Driver(scenario="ehl", sizes="1K-4K-16K")
    d.launch([1, 2])
    d.eng.reclaim(1)
    assert d.eng.counters.oom_reports == 1
    assert d.eng.counters.compress_ops == 0
    assert d.actions()[-1] == "oom"


def _warm_run(d, pfns):
    for p in pfns:
        d.touch(p)
    for p in pfns:
        d.touch(p)
    d.eng.reclaim(len(pfns))


def test_sequential_stream_hits_buffer():
    d = Driver(buffer_pages=4)
    _warm_run(d, range(8))
    for p in range(8):
        d.touch(p)
    c = d.eng.counters
    assert c.demand_faults == 8
    assert c.prefetch_hit == 7
    assert c.prefetch_wasted == 0


def test_prefetch_no_successor():
    d = Driver(buffer_pages=4)
    _warm_run(d, [1])
    d.touch(1)
    assert d.eng.counters.prefetch_issued == 0


def test_fifo_buffer_records_waste():
    d = Driver(buffer_pages=1)
    _warm_run(d, range(4))
    d.touch(0)  # prefetches 1
    d.touch(2)  # fault, prefetch 3 evicts 1
    c = d.eng.counters
    assert c.prefetch_issued == 2
    assert c.prefetch_wasted == 1
    assert "buffer-evict" in d.actions()


def test_buffer_hit_costs_dram_only():
    d = Driver(buffer_pages=4)
    _warm_run(d, range(2))
    d.eng.step(launch_begin(d._next(), 1, 0))
    d.touch(0)
    d.touch(1)
    d.eng.step(launch_end(d._next(), 1))
    report = d.eng.relaunches[-1]
    assert report.sources["predecomp-buffer"] == 1
    assert report.pages_faulted == sum(report.sources.values())


def test_all_resident_latency_is_dram_bound():
    d = Driver()
    d.launch(range(5))
    d.launch(range(5), k=1)
    r = d.eng.relaunches[-1]
    assert r.modeled_latency_ns == 5 * CostModel().dram_copy_ns_per_page
    assert r.sources["resident"] == 5


def test_unknown_page_fault():
    with pytest.raises(FaultError):
        Driver().eng.handle_fault(PageId(1, 1))


@pytest.mark.parametrize("scheme", ["zram", "adaptive"])
def test_small_trace_conserves_every_step(small_trace, scheme):
    eng = replay(small_trace, SchemeConfig(scheme=scheme, mem="256K", zpool="256K"), debug=True)
    assert eng.counters.compress_ops > 0
    for r in eng.relaunches:
        assert r.pages_faulted == sum(r.sources.values())


def test_swap_log_on_disk(small_trace, tmp_path):
    cfg = SchemeConfig(scheme="zram", mem="256K", zpool="128K", swap_path=str(tmp_path / "s.log"))
    eng = replay(small_trace, cfg)
    assert eng.counters.swap_out_ops > 0
    assert eng.swap.write_bytes == eng.counters.swap_out_bytes


def test_config_parsing_and_validation():
    cfg = SchemeConfig(scheme="ariadne", sizes="1K-2K-16K", mem="256M", zpool="96M")
    assert cfg.scheme == "adaptive"
    assert cfg.sizes == (1024, 2048, 16384)
    assert cfg.label == "adaptive-al-1K-2K-16K"
    assert SchemeConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (dict(scheme="nope"), dict(scenario="x"), dict(sizes="1K-3K-16K"),
                dict(zpool=1000), dict(buffer_pages=-1)):
        with pytest.raises(DataError):
            SchemeConfig(**bad)


def test_report_shape(small_trace):
    eng = replay(small_trace, SchemeConfig(mem="256K", zpool="256K"))
    rep = eng.report(trace_id(small_trace))
    assert set(rep) >= {"trace_id", "config", "counters", "relaunches", "totals"}
    assert rep["totals"]["relaunches"] == 15

"""Counters, the latency/CPU cost model and scheme-vs-scheme comparison."""

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ComparisonError, DataError

LEVEL_KEYS = ("hot", "warm", "cold", "none")


@dataclass
class CostModel:
    dram_copy_ns_per_page: float = 80.0
    compress_ns_per_byte: float = 0.9
    compress_ns_per_op: float = 500.0
    decompress_ns_per_byte: float = 0.35
    decompress_ns_per_op: float = 500.0
    flash_read_base_ns: float = 80_000.0
    flash_read_ns_per_byte: float = 10.0
    flash_write_base_ns: float = 200_000.0
    flash_write_ns_per_byte: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DataError(f"cost model field {f.name} must be >= 0")

    def compress_ns(self, ops, nbytes):
        return ops * self.compress_ns_per_op + nbytes * self.compress_ns_per_byte

    def decompress_ns(self, ops, nbytes):
        return ops * self.decompress_ns_per_op + nbytes * self.decompress_ns_per_byte

    def flash_read_ns(self, nbytes):
        return self.flash_read_base_ns + nbytes * self.flash_read_ns_per_byte

    def flash_write_ns(self, nbytes):
        return self.flash_write_base_ns + nbytes * self.flash_write_ns_per_byte

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise DataError(f"unknown cost model fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _by_level():
    return {k: 0 for k in LEVEL_KEYS}


@dataclass
class Counters:
    compress_ops: int = 0
    compress_bytes_in: int = 0
    compress_bytes_out: int = 0
    decompress_ops: int = 0
    decompress_bytes: int = 0
    wasted_decompress_bytes: int = 0
    merge_back_ops: int = 0
    prefetch_issued: int = 0
    prefetch_hit: int = 0
    prefetch_wasted: int = 0
    demand_faults: int = 0
    swap_in_ops: int = 0
    swap_in_bytes: int = 0
    swap_out_ops: int = 0
    swap_out_bytes: int = 0
    reclaim_invocations: int = 0
    oom_reports: int = 0
    compress_ops_by_level: dict = field(default_factory=_by_level)
    compress_bytes_by_level: dict = field(default_factory=_by_level)
    decompress_ops_by_level: dict = field(default_factory=_by_level)
    decompress_bytes_by_level: dict = field(default_factory=_by_level)

    def record_compress(self, chunks, level=None):
        ops = len(chunks)
        nbytes = sum(c.length for c in chunks)
        key = level or "none"
        self.compress_ops += ops
        self.compress_bytes_in += nbytes
        self.compress_bytes_out += sum(c.wire_size for c in chunks)
        self.compress_ops_by_level[key] += ops
        self.compress_bytes_by_level[key] += nbytes
        return ops, nbytes

    def record_decompress(self, chunks, level=None):
        ops = len(chunks)
        nbytes = sum(c.length for c in chunks)
        key = level or "none"
        self.decompress_ops += ops
        self.decompress_bytes += nbytes
        self.decompress_ops_by_level[key] += ops
        self.decompress_bytes_by_level[key] += nbytes
        return ops, nbytes

    def merge(self, other):
        """Associative fold used when combining counters from parallel runs."""
        out = Counters()
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, dict):
                setattr(out, f.name, {k: a.get(k, 0) + b.get(k, 0) for k in LEVEL_KEYS})
            else:
                setattr(out, f.name, a + b)
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def cpu_cost(counters, model):
    """Compress/decompress CPU time implied by the counters, in ns, with per-level split."""
    comp = model.compress_ns(counters.compress_ops, counters.compress_bytes_in)
    decomp = model.decompress_ns(counters.decompress_ops, counters.decompress_bytes)
    by_level = {
        k: {
            "compress_ns": model.compress_ns(counters.compress_ops_by_level[k],
                                             counters.compress_bytes_by_level[k]),
            "decompress_ns": model.decompress_ns(counters.decompress_ops_by_level[k],
                                                 counters.decompress_bytes_by_level[k]),
        }
        for k in LEVEL_KEYS
    }
    return {"compress_ns": comp, "decompress_ns": decomp, "total_ns": comp + decomp,
            "by_level": by_level}


def compression_ratio(counters):
    if counters.compress_bytes_out <= 0:
        return None
    return counters.compress_bytes_in / counters.compress_bytes_out


# -- reports -------------------------------------------------------------------

CPU_NOTE = ("cpu counts compression and decompression for every scheme; "
            "device profilers may miss decompression outside the reclaim thread")


def report_totals(relaunches, counters, model):
    rel = [r for r in relaunches if r["launch"] >= 1]
    cpu = cpu_cost(counters, model)
    return {
        "relaunch_latency_ns": sum(r["modeled_latency_ns"] for r in rel),
        "relaunches": len(rel),
        "pages_faulted": sum(r["pages_faulted"] for r in rel),
        "cpu_ns": cpu["total_ns"],
        "compress_ns": cpu["compress_ns"],
        "decompress_ns": cpu["decompress_ns"],
        "compression_ratio": compression_ratio(counters),
        "flash_write_bytes": counters.swap_out_bytes,
    }


def per_app_latency(relaunches):
    out = {}
    for r in relaunches:
        if r["launch"] >= 1:
            out[str(r["uid"])] = out.get(str(r["uid"]), 0.0) + r["modeled_latency_ns"]
    return out


def _norm(a, b):
    if a is None or b is None:
        return None
    if a == 0:
        return 1.0 if b == 0 else None
    return b / a


def compare(report_a, report_b):
    """Rows of (scope, metric, a, b, b/a, b-a); ``report_a`` is the baseline."""
    if report_a.get("trace_id") != report_b.get("trace_id"):
        raise ComparisonError(
            f"reports come from different traces: {report_a.get('trace_id')} vs {report_b.get('trace_id')}")
    rows = []
    ta, tb = report_a["totals"], report_b["totals"]
    for metric, key in (("latency_ns", "relaunch_latency_ns"), ("cpu_ns", "cpu_ns"),
                        ("compression_ratio", "compression_ratio"),
                        ("flash_write_bytes", "flash_write_bytes")):
        a, b = ta.get(key), tb.get(key)
        rows.append({"scope": "all", "metric": metric, "a": a, "b": b,
                     "normalized": _norm(a, b),
                     "delta": None if a is None or b is None else b - a})
    la, lb = per_app_latency(report_a["relaunches"]), per_app_latency(report_b["relaunches"])
    for uid in sorted(set(la) | set(lb), key=int):
        a, b = la.get(uid), lb.get(uid)
        rows.append({"scope": f"uid {uid}", "metric": "latency_ns", "a": a, "b": b,
                     "normalized": _norm(a, b),
                     "delta": None if a is None or b is None else b - a})
    return rows


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}" if abs(v) < 1e6 else f"{v:.4e}"
    return str(v)


def format_table(rows):
    header = ("scope", "metric", "a", "b", "b/a", "b-a")
    body = [(r["scope"], r["metric"], _fmt(r["a"]), _fmt(r["b"]), _fmt(r["normalized"]),
             _fmt(r["delta"])) for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)) for line in (header, *body)]
    return "\n".join(lines)


def compare_csv_rows(rows):
    return [(r["scope"], r["metric"], r["a"], r["b"], r["normalized"], r["delta"]) for r in rows]


COMPARE_HEADER = ("scope", "metric", "a", "b", "normalized", "delta")

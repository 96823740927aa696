"""Workload characterization: similarity/reuse, eviction deciles, locality, chunk sweeps."""

import csv
import json
from dataclasses import dataclass

from .codec import measure_codec
from .errors import InsufficientDataError
from .hotness import LaunchIndex, window_sets
from .trace import Kind, PageId


@dataclass(frozen=True)
class PairStat:
    uid: int
    pair: int  # launch k compared with launch k+1
    similarity: float
    reuse: float


def hot_similarity(trace, uid, index=None):
    """Similarity and reuse between each pair of consecutive launches of ``uid``.

    similarity(k) = |H_k & H_k+1| / |H_k+1|
    reuse(k)      = |H_k & (H_k+1 | W_k+1)| / |H_k|
    """
    sets = window_sets(trace, uid, index)
    ks = sorted(sets)
    if len(ks) < 2:
        raise InsufficientDataError(f"uid {uid}: need at least 2 launches, found {len(ks)}")
    out = []
    for a, b in zip(ks, ks[1:]):
        h0, _ = sets[a]
        h1, w1 = sets[b]
        sim = len(h0 & h1) / len(h1) if h1 else 0.0
        reuse = len(h0 & (h1 | w1)) / len(h0) if h0 else 0.0
        out.append(PairStat(uid, a, sim, reuse))
    return out


def trace_uids(trace):
    return sorted({ev.uid for ev in trace if ev.kind == Kind.LAUNCH_BEGIN})


def mean_similarity(trace):
    """Average (similarity, reuse) over every consecutive launch pair of every app."""
    index = LaunchIndex(trace)
    stats = [s for uid in trace_uids(trace) for s in hot_similarity(trace, uid, index)]
    if not stats:
        raise InsufficientDataError("no launch pairs in trace")
    return (sum(s.similarity for s in stats) / len(stats), sum(s.reuse for s in stats) / len(stats))


def locality(stream, n=2):
    """P(N): fraction of length-N windows whose sectors climb by exactly one each step."""
    stream = list(stream)
    if n < 2:
        raise ValueError("N must be >= 2")
    if len(stream) < n:
        raise InsufficientDataError(f"stream of {len(stream)} is shorter than N={n}")
    hits, total = _locality_counts(stream, n)
    return hits / total


def _locality_counts(stream, n):
    total = len(stream) - n + 1
    if total <= 0:
        return 0, 0
    step = [stream[i + 1] == stream[i] + 1 for i in range(len(stream) - 1)]
    hits = 0
    run = 0
    # streak[i]: consecutive +1 steps starting at i
    streak = [0] * len(step)
    for i in range(len(step) - 1, -1, -1):
        run = run + 1 if step[i] else 0
        streak[i] = run
    for i in range(total):
        if streak[i] >= n - 1:
            hits += 1
    return hits, total


def pooled_locality(streams, n=2):
    """Pool P(N) counts over several streams (window boundaries are not runs)."""
    hits = total = 0
    for s in streams:
        h, t = _locality_counts(list(s), n)
        hits += h
        total += t
    if total == 0:
        raise InsufficientDataError(f"no stream has {n} accesses")
    return hits / total


def trace_locality(trace, n=2, uid=None, first_launch=False):
    """Pooled P(N) over the pfn order of launch windows; launch 0 excluded by default."""
    streams = []
    seen = {}
    for s_uid, stream in _windows_with_uid(trace, uid):
        k = seen.get(s_uid, 0)
        seen[s_uid] = k + 1
        if k == 0 and not first_launch:
            continue
        streams.append(stream)
    return pooled_locality(streams, n)


def _windows_with_uid(trace, uid):
    current = {}
    for ev in trace:
        if ev.kind == Kind.LAUNCH_BEGIN and (uid is None or ev.uid == uid):
            current[ev.uid] = []
        elif ev.kind == Kind.LAUNCH_END and ev.uid in current:
            yield ev.uid, current.pop(ev.uid)
        elif ev.kind == Kind.TOUCH and ev.uid in current:
            current[ev.uid].append(ev.pfn)


# -- audit-log driven analyses -------------------------------------------------


def load_audit(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def window_seqs(trace, first_launch=False):
    """uid -> set of event seqs inside that app's launch windows."""
    out = {}
    open_ = {}
    for ev in trace:
        if ev.kind == Kind.LAUNCH_BEGIN:
            open_[ev.uid] = ev.launch
        elif ev.kind == Kind.LAUNCH_END:
            open_.pop(ev.uid, None)
        elif ev.kind == Kind.TOUCH and ev.uid in open_:
            if first_launch or open_[ev.uid] > 0:
                out.setdefault(ev.uid, set()).add(ev.seq)
    return out


def fault_sector_stream(audit, trace=None, uid=None):
    """Zpool sectors of demand faults (buffer hits included, prefetches not), in order.

    With ``trace`` given only faults inside relaunch windows count.
    """
    inside = window_seqs(trace) if trace is not None else None
    return [
        rec["sector"]
        for rec in audit
        if rec["action"] in ("fault", "buffer-hit")
        and rec.get("sector") is not None
        and (uid is None or rec["uid"] == uid)
        and (inside is None or rec["seq"] in inside.get(rec["uid"], ()))
    ]


def _label_at(trace, index, sets_cache, uid, pfn, seq):
    """Ground-truth label of a page compressed at ``seq``, relative to the app's next launch."""
    page = PageId(uid, pfn)
    wins = index.windows.get(uid, [])
    for b, e, k in wins:
        if e is None:
            continue
        if trace[b].seq > seq:
            key = (uid, k)
            if key not in sets_cache:
                sets_cache[key] = _sets_for(trace, index, uid, k)
            hot, warm = sets_cache[key]
            if page in hot:
                return "hot"
            if page in warm:
                return "warm"
            return "cold"
    return "cold"


def _sets_for(trace, index, uid, k):
    b, e, nxt = index.bounds(uid, k)
    hot = {ev.page for ev in trace[b:e] if ev.kind == Kind.TOUCH and ev.uid == uid}
    warm = {ev.page for ev in trace[e:nxt] if ev.kind == Kind.TOUCH and ev.uid == uid} - hot
    return hot, warm


def split_parts(n, parts=10):
    """Part sizes: floor(n/parts) each, remainder spread over the last parts."""
    base, rem = divmod(n, parts)
    return [base + (1 if i >= parts - rem else 0) for i in range(parts)]


def eviction_deciles(audit, trace, parts=10):
    """Hot/warm/cold composition of compressed pages, in compression order, by tenths."""
    comps = [r for r in audit if r["action"] == "compress"]
    if len(comps) < parts:
        raise InsufficientDataError(f"only {len(comps)} compressions; need {parts}")
    comps.sort(key=lambda r: r["seq"])  # stable: log order within one event
    index = LaunchIndex(trace)
    cache = {}
    labels = [_label_at(trace, index, cache, r["uid"], r["pfn"], r["seq"]) for r in comps]
    rows = []
    pos = 0
    for part, size in enumerate(split_parts(len(labels), parts)):
        chunk = labels[pos:pos + size]
        pos += size
        rows.append({
            "part": part,
            "count": size,
            "hot": chunk.count("hot") / size if size else 0.0,
            "warm": chunk.count("warm") / size if size else 0.0,
            "cold": chunk.count("cold") / size if size else 0.0,
        })
    return rows


def hot_list_snapshot(audit, trace, uid, k, index=None):
    index = index or LaunchIndex(trace)
    b, _, _ = index.bounds(uid, k)
    seq = trace[b].seq
    found = False
    pages = set()
    for rec in audit:
        if rec["seq"] != seq or rec["uid"] != uid:
            continue
        if rec["action"] == "launch":
            found = True
        elif rec["action"] == "hotlist":
            pages.add(PageId(uid, rec["pfn"]))
    if not found:
        raise InsufficientDataError(f"no hot-list snapshot for uid {uid} launch {k}")
    return pages


def coverage_accuracy(audit, trace, uid, k, index=None):
    """coverage = |L & H_k| / |H_k|; accuracy = |L & (H_k | W_k)| / |L| (None for empty L)."""
    index = index or LaunchIndex(trace)
    listed = hot_list_snapshot(audit, trace, uid, k, index)
    hot, warm = _sets_for(trace, index, uid, k)
    coverage = len(listed & hot) / len(hot) if hot else None
    accuracy = len(listed & (hot | warm)) / len(listed) if listed else None
    return {"uid": uid, "launch": k, "coverage": coverage, "accuracy": accuracy}


def mean_coverage_accuracy(audit, trace, min_launch=1):
    index = LaunchIndex(trace)
    cov, acc = [], []
    for uid in trace_uids(trace):
        for k in index.launches(uid):
            if k < min_launch:
                continue
            r = coverage_accuracy(audit, trace, uid, k, index)
            if r["coverage"] is not None:
                cov.append(r["coverage"])
            if r["accuracy"] is not None:
                acc.append(r["accuracy"])
    if not cov:
        raise InsufficientDataError("no relaunches with hot-list snapshots")
    return sum(cov) / len(cov), (sum(acc) / len(acc) if acc else None)


def chunk_sweep(corpus, sizes, repetitions=3):
    if not sizes:
        return []
    if len(corpus) < max(sizes):
        raise InsufficientDataError(f"corpus of {len(corpus)} bytes is smaller than {max(sizes)}")
    return [measure_codec(corpus, s, repetitions) for s in sizes]


# -- CSV writers -----------------------------------------------------------------


def write_csv(path_or_fh, header, rows):
    own = isinstance(path_or_fh, str)
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    finally:
        if own:
            fh.close()


def similarity_rows(stats):
    return [(s.uid, s.pair, f"{s.similarity:.6f}", f"{s.reuse:.6f}") for s in stats]


SIMILARITY_HEADER = ("uid", "pair", "similarity", "reuse")
DECILES_HEADER = ("part", "hot", "warm", "cold")
LOCALITY_HEADER = ("N", "p")
SWEEP_HEADER = ("chunk", "comp_ns", "decomp_ns", "ratio")
COVERAGE_HEADER = ("uid", "launch", "coverage", "accuracy")


def decile_rows(rows):
    return [(r["part"], f"{r['hot']:.6f}", f"{r['warm']:.6f}", f"{r['cold']:.6f}") for r in rows]


def sweep_rows(samples):
    return [(s.chunk, s.compress_ns, s.decompress_ns, f"{s.ratio:.6f}") for s in samples]

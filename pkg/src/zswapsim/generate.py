"""Synthetic workload generator.

Each app owns a contiguous pfn range split into a hot region, a warm pool and
a cold remainder. Launch 0 touches the initial hot set; the execution phase
that follows allocates the rest of the footprint. Every later relaunch keeps
``round(similarity * h)`` pages of the previous hot set, draws the rest from
the warm pool as contiguous runs, and touches the set in pfn order with just
enough run breaks to land on the consecutive-page target. The execution phase
after a relaunch re-touches enough of the dropped hot pages to hit the reuse
target plus a sample of the warm pool.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import SpecificationError
from .sizes import PAGE_SIZE
from .trace import Kind, TraceEvent

# anonymous footprint after 5 minutes (MB): YouTube, Twitter, Firefox, GEarth, BangDream
PHONE_FOOTPRINTS_MB = (358, 273, 716, 429, 821)
DESK_SCALE = 64

PAYLOAD_MODELS = ("random", "zero-runs", "templated")

PFN_STRIDE = 1 << 20


def desk_pages(mb, scale=DESK_SCALE):
    return max(1, mb * (1 << 20) // PAGE_SIZE // scale)


def default_footprints(apps):
    return [desk_pages(PHONE_FOOTPRINTS_MB[i % len(PHONE_FOOTPRINTS_MB)]) for i in range(apps)]


@dataclass
class GeneratorSpec:
    apps: int = 5
    pages_per_app: object = None  # int, list of ints, or None for desk-scaled phone footprints
    relaunches: int = 5
    hot_similarity: float = 0.7
    reuse: float = 0.98
    consecutive_p2: float = 0.8
    payload_model: str = "templated"
    repeat_period: int = 16384
    seed: int = 0
    hot_fraction: float = 0.15
    warm_fraction: float = 0.3
    warm_touch_fraction: float = 0.6
    warm_similarity: float = 1.0
    cold_touch_fraction: float = 0.01
    exec_passes: int = 3
    mutation_rate: float = 0.03
    extra: dict = field(default_factory=dict)

    def footprints(self):
        if self.pages_per_app is None:
            return default_footprints(self.apps)
        if isinstance(self.pages_per_app, int):
            return [self.pages_per_app] * self.apps
        pages = list(self.pages_per_app)
        if len(pages) != self.apps:
            raise SpecificationError("pages_per_app list length must equal apps")
        return pages

    def validate(self):
        for name in ("hot_similarity", "reuse", "consecutive_p2", "hot_fraction",
                     "warm_fraction", "warm_touch_fraction", "warm_similarity",
                     "cold_touch_fraction",
                     "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecificationError(f"{name}={v} is outside [0, 1]")
        if self.apps < 1:
            raise SpecificationError("apps must be >= 1")
        if self.relaunches < 0:
            raise SpecificationError("relaunches must be >= 0")
        if self.exec_passes < 1:
            raise SpecificationError("exec_passes must be >= 1")
        if self.payload_model not in PAYLOAD_MODELS:
            raise SpecificationError(
                f"payload_model {self.payload_model!r} not in {PAYLOAD_MODELS}")
        if self.payload_model == "templated" and self.repeat_period < 64:
            raise SpecificationError("repeat_period must be >= 64 bytes")
        if self.reuse < self.hot_similarity:
            raise SpecificationError(
                f"reuse {self.reuse} < similarity {self.hot_similarity}: every kept hot "
                "page is also reused, so reuse can never fall below similarity")
        for pages in self.footprints():
            if pages < 1:
                raise SpecificationError("pages_per_app must be >= 1")
            h = _hot_size(self, pages)
            pool = _pool_size(self, pages, h)
            need = h - round(self.hot_similarity * h)
            if self.relaunches and need > pool:
                raise SpecificationError(
                    f"app with {pages} pages: hot set of {h} needs {need} fresh pages per "
                    f"relaunch but the warm pool only has {pool}")
        return self

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        aliases = {"app_count": "apps", "relaunch_count": "relaunches", "similarity": "hot_similarity",
                   "p2": "consecutive_p2", "rng_seed": "seed", "repeat-period": "repeat_period"}
        kwargs = {}
        for key, value in obj.items():
            key = aliases.get(key, key).replace("-", "_")
            key = aliases.get(key, key)
            if key not in names:
                raise SpecificationError(f"unknown generator field {key!r}")
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


def _hot_size(spec, pages):
    return max(1, min(pages, round(spec.hot_fraction * pages)))


def _pool_size(spec, pages, h):
    return max(0, min(pages - h, round(spec.warm_fraction * pages)))


class _Payloads:
    def __init__(self, spec, rng):
        self.model = spec.payload_model
        self.rng = rng
        self.mutation_rate = spec.mutation_rate
        if self.model == "templated":
            self.template = _make_template(rng, spec.repeat_period)

    def page(self, index):
        rng = self.rng
        if self.model == "random":
            return rng.integers(0, 256, PAGE_SIZE, dtype=np.uint8).tobytes()
        if self.model == "zero-runs":
            page = np.zeros(PAGE_SIZE, dtype=np.uint8)
            for _ in range(int(rng.integers(1, 6))):
                ln = int(rng.integers(16, 256))
                at = int(rng.integers(0, PAGE_SIZE - ln))
                page[at:at + ln] = rng.integers(0, 256, ln, dtype=np.uint8)
            return page.tobytes()
        t = self.template
        period = len(t)
        slots = max(1, period // PAGE_SIZE)
        off = int(rng.integers(0, slots)) * PAGE_SIZE if period >= PAGE_SIZE else 0
        idx = (np.arange(PAGE_SIZE) + off) % period
        page = t[idx]
        mask = rng.random(PAGE_SIZE) < self.mutation_rate
        page[mask] = rng.integers(0, 256, int(mask.sum()), dtype=np.uint8)
        return page.tobytes()


def _make_template(rng, period):
    """Record-like bytes: zero padding, repeated 8-byte words and short random fields."""
    words = rng.integers(0, 256, size=(64, 8), dtype=np.uint8)
    t = np.zeros(period + 64, dtype=np.uint8)
    pos = 0
    while pos < period:
        kind = rng.random()
        if kind < 0.25:
            pos += int(rng.integers(8, 48))
        elif kind < 0.65:
            seg = np.tile(words[rng.integers(0, 64)], int(rng.integers(1, 4)))
            t[pos:pos + len(seg)] = seg
            pos += len(seg)
        else:
            ln = int(rng.integers(8, 40))
            t[pos:pos + ln] = rng.integers(0, 256, ln, dtype=np.uint8)
            pos += ln
    return t[:period].copy()


def payload_corpus(model, nbytes, seed=0, repeat_period=16384, mutation_rate=0.03):
    """A corpus of whole pages from one app's payload model, for chunk sweeps."""
    spec = GeneratorSpec(payload_model=model, repeat_period=repeat_period,
                         mutation_rate=mutation_rate, seed=seed)
    gen = _Payloads(spec, np.random.default_rng([seed, 0xC0]))
    npages = max(1, -(-nbytes // PAGE_SIZE))
    return b"".join(gen.page(i) for i in range(npages))[:nbytes]


def _runs(sorted_pfns):
    runs = []
    for p in sorted_pfns:
        if runs and runs[-1][1] == p - 1:
            runs[-1][1] = p
        else:
            runs.append([p, p])
    return runs


def order_with_locality(pages, p2, rng):
    """Order a page set so that exactly round(p2 * (n-1)) neighbours are pfn+1 apart.

    Runs are emitted in ascending order; to remove adjacencies a run is cut into
    pieces that are emitted last-piece-first, which never creates new ones. If
    the set has too few adjacencies the target is clamped to what it allows.
    """
    pfns = sorted(pages)
    n = len(pfns)
    if n < 2:
        return pfns
    runs = _runs(pfns)
    have = n - len(runs)
    want = min(have, round(p2 * (n - 1)))
    cut_count = have - want
    # adjacency k is the pair (pfns[k], pfns[k]+1) inside a run
    internal = [i for i in range(n - 1) if pfns[i + 1] == pfns[i] + 1]
    cuts = set(rng.choice(len(internal), size=cut_count, replace=False).tolist()) if cut_count else set()
    cut_after = {internal[c] for c in cuts}
    out = []
    i = 0
    for start, stop in runs:
        pieces = []
        piece = []
        for p in range(start, stop + 1):
            piece.append(p)
            if i in cut_after:
                pieces.append(piece)
                piece = []
            i += 1
        if piece:
            pieces.append(piece)
        for piece in reversed(pieces):
            out.extend(piece)
    return out


def _drop_pages(prev_hot, count, rng):
    """Drop ``count`` pages from the hot set, whole runs first, so kept pages stay contiguous."""
    if count <= 0:
        return set()
    runs = _runs(sorted(prev_hot))
    order = rng.permutation(len(runs))
    dropped = set()
    left = count
    for r in order:
        start, stop = runs[r]
        ln = stop - start + 1
        if ln <= left:
            dropped.update(range(start, stop + 1))
            left -= ln
        if left == 0:
            break
    if left:
        for r in order:
            start, stop = runs[r]
            if start in dropped:
                continue
            ln = stop - start + 1
            take = min(left, ln - 1)
            dropped.update(range(stop - take + 1, stop + 1))
            left -= take
            if left == 0:
                break
    return dropped


def _fresh_runs(candidates, count, rng):
    """Pick ``count`` pages from sorted ``candidates`` as a few contiguous runs."""
    picked = []
    free = _runs(candidates)
    while count > 0 and free:
        fits = [i for i, (a, b) in enumerate(free) if b - a + 1 >= count]
        if fits:
            i = fits[int(rng.integers(0, len(fits)))]
            a, b = free[i]
            lo = a + int(rng.integers(0, (b - a + 1) - count + 1))
            picked.extend(range(lo, lo + count))
            count = 0
        else:
            i = max(range(len(free)), key=lambda j: free[j][1] - free[j][0])
            a, b = free.pop(i)
            picked.extend(range(a, b + 1))
            count -= b - a + 1
    return set(picked)


class _AppPlan:
    """Per-app page sets for every launch; pfns are app-local offsets."""

    def __init__(self, spec, pages, rng):
        self.pages = pages
        self.h = _hot_size(spec, pages)
        self.pool_end = self.h + _pool_size(spec, pages, self.h)
        self.rng = rng
        self.spec = spec
        self.hot = set(range(self.h))
        pool = list(range(self.h, self.pool_end))
        self.warm = _fresh_runs(pool, round(spec.warm_touch_fraction * len(pool)), rng)

    def window_order(self):
        return order_with_locality(self.hot, self.spec.consecutive_p2, self.rng)

    def rotate(self):
        spec, rng, h = self.spec, self.rng, self.h
        prev = self.hot
        keep = round(spec.hot_similarity * h)
        dropped = _drop_pages(prev, h - keep, rng)
        kept = prev - dropped
        # new hot pages come from the last execution working set first
        recent = sorted(self.warm - prev)
        fresh = _fresh_runs(recent, h - len(kept), rng)
        if len(fresh) < h - len(kept):
            candidates = [p for p in range(self.pool_end) if p not in prev and p not in fresh]
            fresh |= _fresh_runs(candidates, h - len(kept) - len(fresh), rng)
        self.hot = kept | fresh
        reused = max(0, min(len(dropped), round(spec.reuse * h) - len(kept)))
        picks = rng.choice(sorted(dropped), size=reused, replace=False).tolist() if reused else []
        self._drift_warm()
        return dropped, picks

    def _drift_warm(self):
        """Keep ``warm_similarity`` of the execution working set; refill from the pool."""
        spec, rng = self.spec, self.rng
        w = len(self.warm)
        if w == 0:
            return
        gone = _drop_pages(self.warm, w - round(spec.warm_similarity * w), rng)
        kept = self.warm - gone
        candidates = [p for p in range(self.h, self.pool_end) if p not in kept and p not in self.hot]
        self.warm = kept | _fresh_runs(candidates, w - len(kept), rng)

    def execution_pages(self, dropped, picks):
        spec, rng = self.spec, self.rng
        exclude = self.hot | dropped
        warm = [p for p in self.warm if p not in exclude]
        cold = [p for p in range(self.pool_end, self.pages) if p not in exclude]
        n_cold = round(spec.cold_touch_fraction * len(cold))
        cold_picks = rng.choice(cold, size=n_cold, replace=False).tolist() if n_cold else []
        return sorted(set(picks) | set(warm) | set(cold_picks))


def generate(spec):
    """Generate a deterministic trace (list of TraceEvent) for ``spec``."""
    spec.validate()
    master = np.random.default_rng([spec.seed, 0x5EED])
    footprints = spec.footprints()
    plans = []
    payloads = []
    for uid, pages in enumerate(footprints):
        plans.append(_AppPlan(spec, pages, np.random.default_rng([spec.seed, uid, 1])))
        payloads.append(_Payloads(spec, np.random.default_rng([spec.seed, uid, 2])))

    events = []
    allocated = [set() for _ in footprints]

    def emit(kind, uid, pfn=0, launch=0):
        payload = None
        if kind == Kind.TOUCH and pfn not in allocated[uid]:
            allocated[uid].add(pfn)
            payload = payloads[uid].page(pfn)
        events.append(TraceEvent(len(events), kind, uid, uid * PFN_STRIDE + pfn if kind == Kind.TOUCH else 0,
                                 launch, False, payload))

    def execution(uid, pages):
        rng = plans[uid].rng
        for _ in range(spec.exec_passes):
            for p in order_with_locality(pages, spec.consecutive_p2, rng):
                emit(Kind.TOUCH, uid, p)

    for k in range(spec.relaunches + 1):
        order = list(range(spec.apps)) if k == 0 else master.permutation(spec.apps).tolist()
        for uid in order:
            plan = plans[uid]
            dropped, picks = (set(), []) if k == 0 else plan.rotate()
            emit(Kind.FOREGROUND, uid)
            emit(Kind.LAUNCH_BEGIN, uid, launch=k)
            for p in plan.window_order():
                emit(Kind.TOUCH, uid, p)
            emit(Kind.LAUNCH_END, uid)
            if k == 0:
                for p in range(plan.pages):
                    if p not in plan.hot:
                        emit(Kind.TOUCH, uid, p)
            execution(uid, plan.execution_pages(dropped, picks))
    return events

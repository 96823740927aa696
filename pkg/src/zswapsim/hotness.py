"""Hot/warm/cold page lists per application and victim selection across apps.

Lists are ``OrderedDict`` keyed by PageId with the most recently used page at
the *end*; iteration from the front therefore walks LRU-first. Every list has a
resident-only twin so victim selection never scans compressed pages.
"""

import enum
import json
from collections import OrderedDict
from dataclasses import dataclass, field

from .errors import InsufficientDataError, ProtocolError
from .trace import Kind, PageId


class Level(enum.IntEnum):
    COLD = 0
    WARM = 1
    HOT = 2

    @property
    def label(self):
        return self.name.lower()


LEVELS = (Level.COLD, Level.WARM, Level.HOT)


@dataclass
class Transition:
    page: PageId
    before: object  # Level or None for a first touch
    after: Level


@dataclass
class AppLists:
    uid: int
    lists: dict = field(default_factory=lambda: {lv: OrderedDict() for lv in LEVELS})
    resident: dict = field(default_factory=lambda: {lv: OrderedDict() for lv in LEVELS})
    hot_capacity: object = None  # None until profiled or observed
    last_relaunch: int = -1
    window: object = None  # open launch ordinal or None
    working_set: OrderedDict = field(default_factory=OrderedDict)
    launches_seen: int = 0

    def ordered(self, level):
        """Pages of one level, most recently used first."""
        return list(reversed(self.lists[level]))


class HotnessState:
    """Per-app lists plus the cross-app LRU order and the foreground app."""

    def __init__(self, initial_hot_capacity=None, debug=False):
        self.apps = {}
        self.app_lru = OrderedDict()  # uid -> None, least recently used app first
        self.foreground = None
        self.level = {}  # PageId -> Level
        self.initial_hot_capacity = initial_hot_capacity
        self.debug = debug

    def app(self, uid):
        lists = self.apps.get(uid)
        if lists is None:
            lists = AppLists(uid, hot_capacity=self.initial_hot_capacity)
            self.apps[uid] = lists
            self.app_lru[uid] = None
        return lists

    # -- residency bookkeeping (driven by the engine) --------------------------

    def set_resident(self, page, resident):
        lv = self.level[page]
        res = self.apps[page.uid].resident[lv]
        if resident:
            res[page] = None
            res.move_to_end(page)
        else:
            res.pop(page, None)

    def is_resident(self, page):
        lv = self.level.get(page)
        return lv is not None and page in self.apps[page.uid].resident[lv]

    def _move(self, app, page, src, dst, mru=True):
        resident = page in app.resident[src]
        del app.lists[src][page]
        app.resident[src].pop(page, None)
        app.lists[dst][page] = None
        if not mru:
            app.lists[dst].move_to_end(page, last=False)
        if resident:
            app.resident[dst][page] = None
            if not mru:
                app.resident[dst].move_to_end(page, last=False)
        self.level[page] = dst

    # -- operations ------------------------------------------------------------

    def begin_window(self, uid, launch):
        app = self.app(uid)
        if app.window is not None:
            raise ProtocolError(f"uid {uid}: launch {launch} begins while launch {app.window} is open")
        app.window = launch
        app.working_set = OrderedDict()
        self.foreground = uid

    def touch(self, page, during_relaunch=False, resident=True):
        """Record an access; returns the level transition."""
        app = self.app(page.uid)
        self.app_lru.move_to_end(page.uid)
        before = self.level.get(page)
        if before is None:
            after = Level.COLD
            if during_relaunch and app.launches_seen == 0:
                cap = app.hot_capacity
                if cap is None or len(app.lists[Level.HOT]) < cap:
                    after = Level.HOT
            app.lists[after][page] = None
            self.level[page] = after
            if resident:
                app.resident[after][page] = None
        else:
            after = before
            if before == Level.COLD and not during_relaunch:
                after = Level.WARM
                self._move(app, page, before, after)
            else:
                app.lists[before].move_to_end(page)
                if page in app.resident[before]:
                    app.resident[before].move_to_end(page)
        if during_relaunch:
            app.working_set[page] = None
            app.working_set.move_to_end(page)
        if self.debug:
            self.check()
        return Transition(page, before, after)

    def on_relaunch_end(self, uid):
        """Rotate lists after a launch window closes.

        Old hot pages not used in the window go to the warm front; every page
        touched in the window becomes hot. On the first launch the window pages
        were already placed hot (up to capacity) by ``touch``.
        """
        app = self.apps.get(uid)
        if app is None or app.window is None:
            raise ProtocolError(f"uid {uid}: launch end with no open window")
        ws = app.working_set
        demoted = promoted = 0
        if app.launches_seen > 0:
            for page in list(app.lists[Level.HOT]):
                if page not in ws:
                    self._move(app, page, Level.HOT, Level.WARM)
                    demoted += 1
            # window order: first touched is least recent, so it lands nearest the tail
            for page in ws:
                lv = self.level[page]
                if lv != Level.HOT:
                    self._move(app, page, lv, Level.HOT)
                    promoted += 1
                else:
                    app.lists[Level.HOT].move_to_end(page)
                    if page in app.resident[Level.HOT]:
                        app.resident[Level.HOT].move_to_end(page)
            app.hot_capacity = len(ws)
        else:
            if app.hot_capacity is None:
                app.hot_capacity = len(app.lists[Level.HOT])
            promoted = len(app.lists[Level.HOT])
        app.last_relaunch = app.window
        app.launches_seen += 1
        app.window = None
        app.working_set = OrderedDict()
        if self.debug:
            self.check()
        return {"demoted": demoted, "promoted": promoted}

    def forget(self, page):
        lv = self.level.pop(page)
        app = self.apps[page.uid]
        del app.lists[lv][page]
        app.resident[lv].pop(page, None)

    def select_victims(self, needed, exclude_levels=(), group=None):
        """Pick up to ``needed`` resident pages, cold first, then warm, then hot.

        Within a level background apps go in app-LRU order and the foreground app
        last; within an app the LRU tail goes first. ``group`` maps a level to a
        batch size; the selection for one app at that level is rounded up to a
        multiple of it while pages remain, so multi-page extents come out full.
        """
        victims = []
        if needed <= 0:
            return victims
        group = group or {}
        order = [u for u in self.app_lru if u != self.foreground]
        if self.foreground in self.apps:
            order.append(self.foreground)
        for lv in LEVELS:
            if lv in exclude_levels:
                continue
            g = group.get(lv, 1)
            for uid in order:
                if len(victims) >= needed:
                    break
                res = self.apps[uid].resident[lv]
                if not res:
                    continue
                want = needed - len(victims)
                if g > 1:
                    want = -(-want // g) * g
                taken = 0
                for page in res:
                    if taken >= want:
                        break
                    victims.append((page, lv))
                    taken += 1
            if len(victims) >= needed:
                break
        return victims

    def lowest_resident_level(self, exclude_levels=()):
        for lv in LEVELS:
            if lv in exclude_levels:
                continue
            if any(app.resident[lv] for app in self.apps.values()):
                return lv
        return None

    def check(self):
        """Disjointness/totality of the lists; raises AssertionError on violation."""
        seen = 0
        for uid, app in self.apps.items():
            for lv in LEVELS:
                for page in app.lists[lv]:
                    assert page.uid == uid, page
                    assert self.level.get(page) == lv, (page, lv)
                    seen += 1
                for page in app.resident[lv]:
                    assert page in app.lists[lv], page
        assert seen == len(self.level), "page in more than one list"
        assert list(self.app_lru) == list(dict.fromkeys(self.app_lru)), "duplicate app"
        assert set(self.app_lru) == set(self.apps)

    def snapshot(self):
        """JSON-ready dump: apps with their lists as pfns, most recently used first."""
        return {
            "foreground": self.foreground,
            "app_lru": list(self.app_lru),
            "apps": [
                {
                    "uid": uid,
                    "hot_capacity": app.hot_capacity,
                    **{lv.label: [p.pfn for p in app.ordered(lv)] for lv in reversed(LEVELS)},
                }
                for uid, app in sorted(self.apps.items())
            ],
        }

    def dump_json(self):
        return json.dumps(self.snapshot(), sort_keys=True)


# -- ground truth from a trace ---------------------------------------------


class LaunchIndex:
    """Positions of each app's launch windows inside a trace."""

    def __init__(self, trace):
        self.trace = trace
        self.windows = {}  # uid -> list of [begin_pos, end_pos, launch]
        for pos, ev in enumerate(trace):
            if ev.kind == Kind.LAUNCH_BEGIN:
                self.windows.setdefault(ev.uid, []).append([pos, None, ev.launch])
            elif ev.kind == Kind.LAUNCH_END:
                wins = self.windows.get(ev.uid)
                if wins and wins[-1][1] is None:
                    wins[-1][1] = pos

    def launches(self, uid):
        return [w[2] for w in self.windows.get(uid, []) if w[1] is not None]

    def bounds(self, uid, k):
        """(begin position, end position, next begin position or len(trace))."""
        wins = self.windows.get(uid, [])
        for i, (b, e, launch) in enumerate(wins):
            if launch == k and e is not None:
                nxt = wins[i + 1][0] if i + 1 < len(wins) else len(self.trace)
                return b, e, nxt
        raise InsufficientDataError(f"uid {uid} has no complete launch {k}")


def label_ground_truth(trace, uid, k, index=None):
    """Oracle hot/warm/cold labels for launch ``k`` of ``uid``.

    hot: touched inside window k; warm: touched after the window and before the
    next launch of the app, but not hot; cold: every other page of the app seen
    before window k.
    """
    index = index or LaunchIndex(trace)
    try:
        b, e, nxt = index.bounds(uid, k)
    except InsufficientDataError as exc:
        raise IndexError(str(exc)) from None
    hot, warm, before = set(), set(), set()
    for ev in trace[:b]:
        if ev.kind == Kind.TOUCH and ev.uid == uid:
            before.add(ev.page)
    for ev in trace[b:e]:
        if ev.kind == Kind.TOUCH and ev.uid == uid:
            hot.add(ev.page)
    for ev in trace[e:nxt]:
        if ev.kind == Kind.TOUCH and ev.uid == uid and ev.page not in hot:
            warm.add(ev.page)
    labels = {p: "cold" for p in before}
    labels.update({p: "warm" for p in warm})
    labels.update({p: "hot" for p in hot})
    return labels


def window_sets(trace, uid, index=None):
    """Per launch: (hot set, warm set) in one pass; used by the analyzers."""
    index = index or LaunchIndex(trace)
    out = {}
    for k in index.launches(uid):
        b, e, nxt = index.bounds(uid, k)
        hot = {ev.page for ev in trace[b:e] if ev.kind == Kind.TOUCH and ev.uid == uid}
        warm = {ev.page for ev in trace[e:nxt] if ev.kind == Kind.TOUCH and ev.uid == uid} - hot
        out[k] = (hot, warm)
    return out

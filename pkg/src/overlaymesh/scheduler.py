"""Conflict-free periodic schedules in baseline and overlay mode.

A slot is a set of simultaneous transmissions. In baseline mode every pair
of transmissions in a slot must be conflict-free. In overlay mode a
*secondary* transmission may sit inside the interference region of exactly
one *primary* as long as its transmitter already knows the packet that
primary is carrying (it forwarded or originated that packet earlier).

The exact search works on link uses: one use per (source, hop) per packet.
With saturated sources and unbounded buffers, a period of T slots in which
every hop of every route fires k times is a steady state as soon as enough
packets are pre-positioned along the routes. Finding the best k/T therefore
reduces to covering each link use k times with as few admissible slots as
possible, which is solved exactly as an integer program over all maximal
admissible slots.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import LinearConstraint, milp
from scipy.sparse import csc_matrix

from .topology import Link, Topology, TopologyError, TrafficSpec, conflicts, node_label

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    OVERLAY = "overlay"


PRIMARY = "P"
SECONDARY = "S"


class Packet(NamedTuple):
    source: int
    seq: int

    def __str__(self):
        return f"{self.source}#{self.seq}"


class Transmission(NamedTuple):
    link: Link
    packet: Packet
    kind: str = PRIMARY
    paired: Optional[Link] = None

    def __str__(self):
        role = PRIMARY if self.kind == PRIMARY else f"S({self.paired})"
        return f"{self.link}[{self.packet}][{role}]"


class Violation(NamedTuple):
    rule: str
    transmissions: Tuple[Transmission, ...]
    detail: str


class NoFeasibleSchedule(RuntimeError):
    """No delivering periodic schedule exists within the search bounds."""


@dataclass(frozen=True)
class SearchBounds:
    t_max: int = 48
    k_max: int = 3
    inflight_max: int = 4

    def __post_init__(self):
        if min(self.t_max, self.k_max, self.inflight_max) < 1:
            raise ValueError(f"bounds must be positive: {self}")


class KnowledgeState:
    """Packets each node has originated or transmitted so far."""

    def __init__(self, known: Optional[Mapping[int, Iterable[Packet]]] = None):
        self._known: Dict[int, set] = defaultdict(set)
        for node, pkts in (known or {}).items():
            self._known[node].update(pkts)

    def knows(self, node: int, packet: Packet) -> bool:
        return packet in self._known.get(node, ())

    def learn(self, node: int, packet: Packet) -> None:
        self._known[node].add(packet)

    def prune(self, packet: Packet, keep: Iterable[int] = ()) -> None:
        keep = set(keep)
        for node, pkts in self._known.items():
            if node not in keep:
                pkts.discard(packet)

    def copy(self) -> "KnowledgeState":
        return KnowledgeState({n: set(p) for n, p in self._known.items()})

    def known(self, node: int) -> FrozenSet[Packet]:
        return frozenset(self._known.get(node, ()))


@dataclass(frozen=True)
class Schedule:
    """One period of a steady-state schedule.

    ``backlog`` maps ``(source, route position)`` to the packets buffered
    there when the period starts; ``slots`` carry the packets moved during
    the first period replayed from that state.
    """

    mode: Mode
    traffic: TrafficSpec
    slots: Tuple[Tuple[Transmission, ...], ...]
    deliveries_per_period: int
    backlog: Mapping[Tuple[int, int], int] = field(default_factory=dict)
    rate_upper_bound: Optional[Fraction] = None

    @property
    def period(self) -> int:
        return len(self.slots)

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.deliveries_per_period, self.period)

    @property
    def uses_overlay(self) -> bool:
        return any(t.kind == SECONDARY for s in self.slots for t in s)

    def cognitive_slots(self) -> int:
        return sum(1 for s in self.slots if any(t.kind == SECONDARY for t in s))


def format_slot(index: int, slot: Sequence[Transmission]) -> str:
    return f"slot {index}: " + " ".join(str(t) for t in slot)


def format_schedule(schedule: Schedule) -> str:
    """Text dump, one line per slot, numbered from 1."""
    head = (f"# mode={schedule.mode.value} period={schedule.period} "
            f"deliveries_per_period={schedule.deliveries_per_period}")
    return "\n".join([head] + [format_slot(i, s) for i, s in enumerate(schedule.slots, 1)]) + "\n"


def _sort_slot(transmissions):
    return tuple(sorted(transmissions, key=lambda t: (t.kind != PRIMARY, t.link, t.packet)))


# -- slot admission ------------------------------------------------------------

def validate_slot(topo: Topology, slot: Iterable[Transmission], mode: Mode,
                  knowledge: Optional[KnowledgeState] = None) -> List[Violation]:
    """Every rule the slot breaks; an empty list means the slot is admissible."""
    slot = list(slot)
    knowledge = knowledge or KnowledgeState()
    out = []
    for t in slot:
        if not topo.has_link(t.link):
            out.append(Violation("link", (t,), f"{t.link} is not a link"))
    if out:
        return out

    seen = {}
    for t in slot:
        for node in t.link:
            if node in seen:
                out.append(Violation("half-duplex", (seen[node], t),
                                     f"node {node_label(node)} used twice"))
            else:
                seen[node] = t

    primaries = [t for t in slot if t.kind == PRIMARY]
    secondaries = [t for t in slot if t.kind != PRIMARY]
    if mode == Mode.BASELINE and secondaries:
        out.extend(Violation("mode", (t,), "secondary transmission in baseline mode")
                   for t in secondaries)
    pair_counts = Counter(t.paired for t in secondaries)
    primary_links = Counter(t.link for t in primaries)

    for i, t in enumerate(slot):
        for u in slot[i + 1:]:
            if t.link == u.link or set(t.link) & set(u.link):
                continue  # already reported as half-duplex
            if not conflicts(topo, t.link, u.link):
                continue
            if mode == Mode.OVERLAY and _is_pair(t, u):
                continue
            out.append(Violation("conflict", (t, u), f"{t.link} conflicts with {u.link}"))

    if mode == Mode.OVERLAY:
        by_link = {t.link: t for t in primaries}
        for s in secondaries:
            if s.kind != SECONDARY or s.paired is None or primary_links[s.paired] != 1:
                out.append(Violation("pairing", (s,), "secondary lacks a unique primary"))
                continue
            p = by_link[s.paired]
            if pair_counts[s.paired] > 1:
                out.append(Violation("pairing", (s, p), f"{p.link} has several secondaries"))
            if not conflicts(topo, s.link, p.link):
                out.append(Violation("pairing", (s, p),
                                     f"{s.link} does not interfere with its primary"))
            if not knowledge.knows(s.link.tx, p.packet):
                out.append(Violation("knowledge", (s, p),
                                     f"node {node_label(s.link.tx)} does not know {p.packet}"))
    return out


def _is_pair(t, u):
    return ((t.kind == SECONDARY and u.kind == PRIMARY and t.paired == u.link)
            or (u.kind == SECONDARY and t.kind == PRIMARY and u.paired == t.link))


def overlay_pairing_candidates(topo: Topology, slot: Iterable[Transmission],
                               knowledge: KnowledgeState,
                               offers: Iterable[Tuple[Link, Packet]]) -> List[Transmission]:
    """Secondaries that could individually join ``slot``.

    ``offers`` are the (link, packet) moves nodes are able to make. Each
    returned transmission is paired to the single primary it interferes with
    and passes :func:`validate_slot` when added on its own.
    """
    slot = list(slot)
    busy = {n for t in slot for n in t.link}
    taken = {t.paired for t in slot if t.kind == SECONDARY}
    primaries = [t for t in slot if t.kind == PRIMARY]
    out = []
    for link, packet in offers:
        if link.tx in busy or link.rx in busy or not topo.has_link(link):
            continue
        hit = [t for t in slot if conflicts(topo, link, t.link)]
        if len(hit) != 1 or hit[0].kind != PRIMARY or hit[0].link in taken:
            continue
        p = hit[0]
        if p not in primaries or not knowledge.knows(link.tx, p.packet):
            continue
        out.append(Transmission(link, packet, SECONDARY, p.link))
    return out


# -- exact search --------------------------------------------------------------

class _Uses:
    """Link uses of a traffic spec and their pairwise relations as bitmasks."""

    def __init__(self, topo: Topology, traffic: TrafficSpec, mode: Mode):
        self.items = [(s, h) for s in traffic.sources for h in range(len(traffic.routes[s]) - 1)]
        self.links = [Link(traffic.routes[s][h], traffic.routes[s][h + 1]) for s, h in self.items]
        n = len(self.items)
        self.conf = [0] * n
        self.pair = [0] * n
        # orient[i][j]: i may be the secondary of primary j
        self.orient = set()
        for i in range(n):
            for j in range(i + 1, n):
                li, lj = self.links[i], self.links[j]
                if not conflicts(topo, li, lj):
                    continue
                self.conf[i] |= 1 << j
                self.conf[j] |= 1 << i
                if mode != Mode.OVERLAY or set(li) & set(lj):
                    continue
                for a, b in ((i, j), (j, i)):
                    src, hop = self.items[b]
                    if self.links[a].tx in traffic.routes[src][:hop]:
                        self.orient.add((a, b))
                if (i, j) in self.orient or (j, i) in self.orient:
                    self.pair[i] |= 1 << j
                    self.pair[j] |= 1 << i


def _addable(uses, x, mask):
    near = uses.conf[x] & mask
    if near == 0:
        return True
    if near & (near - 1):
        return False
    y = near.bit_length() - 1
    return bool(uses.pair[x] >> y & 1) and (uses.conf[y] & mask) == 0


def maximal_slots(uses: _Uses) -> List[int]:
    """All maximal admissible sets of link uses, as bitmasks.

    A set is admissible when its induced conflict graph is a matching made
    of pairable edges; for baseline mode no edge is pairable, so these are
    the maximal independent sets.
    """
    n = len(uses.items)
    out = []

    def blocked_later(x, mask, later):
        # can some later item still make x non-addable?
        reach = uses.conf[x]
        m = uses.conf[x] & mask
        while m:
            z = m & -m
            reach |= uses.conf[z.bit_length() - 1]
            m ^= z
        return bool(reach & later)

    def rec(i, mask, excluded):
        if i == n:
            if not any(_addable(uses, x, mask) for x in excluded):
                out.append(mask)
            return
        later = ((1 << n) - 1) ^ ((1 << (i + 1)) - 1)
        for x in excluded:
            if _addable(uses, x, mask) and not blocked_later(x, mask, later | (1 << i)):
                return
        if _addable(uses, i, mask):
            rec(i + 1, mask | (1 << i), excluded)
            excl = excluded + [i]
            if not blocked_later(i, mask, later):
                return
            rec(i + 1, mask, excl)
        else:
            rec(i + 1, mask, excluded)

    rec(0, 0, [])
    return out


def _min_cover(columns, n_items, k, time_limit=None):
    """Smallest number of columns (with repetition) covering each item k times."""
    rows, cols = [], []
    for c, mask in enumerate(columns):
        for i in range(n_items):
            if mask >> i & 1:
                rows.append(i)
                cols.append(c)
    a = csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_items, len(columns)))
    options = {"disp": False}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(c=np.ones(len(columns)), constraints=LinearConstraint(a, lb=k, ub=np.inf),
               integrality=np.ones(len(columns)), bounds=(0, k), options=options)
    if res.status != 0 or res.x is None:
        raise NoFeasibleSchedule(f"integer program failed: {res.message}")
    counts = np.rint(res.x).astype(int)
    lp = milp(c=np.ones(len(columns)), constraints=LinearConstraint(a, lb=1, ub=np.inf),
              bounds=(0, np.inf), options={"disp": False}) if k == 1 else None
    return counts, (lp.fun if lp is not None and lp.status == 0 else None)


def _trim(columns_used, n_items, k):
    """Drop surplus coverage so each item is used exactly k times."""
    remaining = [k] * n_items
    out = []
    for mask in columns_used:
        keep = 0
        for i in range(n_items):
            if mask >> i & 1 and remaining[i] > 0:
                remaining[i] -= 1
                keep |= 1 << i
        if keep:
            out.append(keep)
    return out


def _roles(uses, mask):
    """Split a slot into primaries and (secondary, primary) pairs."""
    members = [i for i in range(len(uses.items)) if mask >> i & 1]
    pairs = []
    secondary = set()
    for i in members:
        for j in members:
            if i < j and uses.conf[i] >> j & 1:
                if (j, i) in uses.orient:
                    pairs.append((j, i))
                    secondary.add(j)
                else:
                    pairs.append((i, j))
                    secondary.add(i)
    return [i for i in members if i not in secondary], pairs


def _occupancy_plan(order, uses, traffic):
    """Backlog needed to replay ``order`` cyclically, and peak in-flight count."""
    need = defaultdict(int)
    occ = defaultdict(int)
    for mask in order:
        arrivals = []
        for i in _bits(mask):
            src, hop = uses.items[i]
            if hop > 0:
                if occ[src, hop] > 0:
                    occ[src, hop] -= 1
                else:
                    need[src, hop] += 1
            if hop + 1 < len(traffic.routes[src]) - 1:
                arrivals.append((src, hop + 1))
        for key in arrivals:
            occ[key] += 1
    # replay again from the backlog to find the peak per source
    level = defaultdict(int)
    for (src, hop), c in need.items():
        level[src] += c
    peak = dict(level)
    for mask in order:
        for i in _bits(mask):
            src, hop = uses.items[i]
            if hop > 0:
                level[src] -= 1
            if hop + 1 < len(traffic.routes[src]) - 1:
                level[src] += 1
        for src in traffic.sources:
            peak[src] = max(peak.get(src, 0), level[src])
    return dict(need), max(peak.values(), default=0), sum(need.values())


def _bits(mask):
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


def _order_slots(masks, uses, traffic):
    """Cyclic slot order keeping the number of buffered packets low.

    Greedy: repeatedly take the slot needing the fewest packets that are not
    yet in place, preferring moves close to the gateway. Every distinct slot
    is tried as the starting point and the best order is kept.
    """
    masks = sorted(masks)
    hop_weight = {}
    for m in set(masks):
        hop_weight[m] = -sum(len(traffic.routes[uses.items[i][0]]) - uses.items[i][1]
                             for i in _bits(m))
    best = None
    for start in sorted(set(masks)):
        pool = Counter(masks)
        pool[start] -= 1
        order = [start]
        occ = defaultdict(int)

        def apply(mask):
            for i in _bits(mask):
                src, hop = uses.items[i]
                if hop > 0 and occ[src, hop] > 0:
                    occ[src, hop] -= 1
            for i in _bits(mask):
                src, hop = uses.items[i]
                if hop + 1 < len(traffic.routes[src]) - 1:
                    occ[src, hop + 1] += 1

        apply(start)
        while sum(pool.values()):
            def cost(m):
                miss = sum(1 for i in _bits(m)
                           if uses.items[i][1] > 0 and occ[uses.items[i]] == 0)
                return (miss, hop_weight[m], m)
            nxt = min((m for m, c in pool.items() if c > 0), key=cost)
            pool[nxt] -= 1
            order.append(nxt)
            apply(nxt)
        need, peak, total = _occupancy_plan(order, uses, traffic)
        key = (peak, total, order)
        if best is None or key < best[0]:
            best = (key, order, need)
    return best[1], best[2], best[0][0]


@dataclass
class _Found:
    k: int
    masks: List[int]
    lp_period: Optional[float]


def _search(uses, n_items, bounds, time_limit):
    columns = maximal_slots(uses)
    log.debug("%d maximal admissible slots over %d link uses", len(columns), n_items)
    best = None
    lp_period = None
    for k in range(1, bounds.k_max + 1):
        counts, lp = _min_cover(columns, n_items, k, time_limit)
        if lp is not None:
            lp_period = lp
        t = int(counts.sum())
        if t > bounds.t_max:
            continue
        if best is None or Fraction(k, t) > Fraction(best.k, len(best.masks)):
            used = [m for m, c in zip(columns, counts) for _ in range(c)]
            best = _Found(k, _trim(used, n_items, k), None)
    if best is None:
        raise NoFeasibleSchedule(
            f"no feasible schedule within bounds (t_max={bounds.t_max}, k_max={bounds.k_max})")
    best.lp_period = lp_period
    return best


def best_periodic_schedule(topo: Topology, traffic: TrafficSpec, mode: Mode = Mode.BASELINE,
                           bounds: SearchBounds = SearchBounds(),
                           time_limit: Optional[float] = None) -> Schedule:
    """Periodic schedule maximising per-source deliveries per slot.

    Every source delivers the same k packets per period of T slots; the
    pair with the largest k/T inside ``bounds`` wins, ties going to the
    smaller k. Raises :class:`NoFeasibleSchedule` when nothing fits.
    """
    mode = Mode(mode)
    if not traffic.sources:
        raise NoFeasibleSchedule("traffic spec has no sources")
    for src in traffic.sources:
        for link in traffic.hops(src):
            if not topo.has_link(link):
                raise TopologyError(f"route of {src} uses non-link {link}")
    uses = _Uses(topo, traffic, mode)
    n = len(uses.items)
    found = _search(uses, n, bounds, time_limit)
    order, need, peak = _order_slots(found.masks, uses, traffic)
    if peak > bounds.inflight_max:
        raise NoFeasibleSchedule(
            f"best schedule needs {peak} packets in flight per source "
            f"(inflight_max={bounds.inflight_max})")
    plan = [_roles(uses, m) for m in order]
    slots = _materialise(uses, traffic, plan, need)
    upper = None
    if found.lp_period:
        upper = Fraction(1) / Fraction(found.lp_period).limit_denominator(10_000)
    sched = Schedule(mode, traffic, slots, found.k, dict(need), upper)
    problems = check_schedule(topo, sched)
    if problems:
        raise AssertionError(f"search produced an invalid schedule: {problems[:3]}")
    return sched


# -- steady-state replay -------------------------------------------------------

class _Replay:
    """Packet-level state of a steady-state replay."""

    def __init__(self, traffic: TrafficSpec, backlog: Mapping[Tuple[int, int], int]):
        self.traffic = traffic
        self.queues: Dict[Tuple[int, int], List[Packet]] = defaultdict(list)
        self.knowledge = KnowledgeState()
        self.next_seq = {}
        self.delivered = Counter()
        self.history: Dict[Packet, List[int]] = defaultdict(list)
        for src in traffic.sources:
            route = traffic.routes[src]
            seq = 1
            # farther along the route means older
            for pos in range(len(route) - 2, 0, -1):
                for _ in range(backlog.get((src, pos), 0)):
                    pkt = Packet(src, seq)
                    seq += 1
                    self.queues[src, pos].append(pkt)
                    for node in route[:pos]:
                        self.knowledge.learn(node, pkt)
                    self.history[pkt] = list(range(pos))
            self.next_seq[src] = seq

    def take(self, src, hop):
        if hop == 0:
            pkt = Packet(src, self.next_seq[src])
            self.next_seq[src] += 1
            self.knowledge.learn(self.traffic.routes[src][0], pkt)
            return pkt
        queue = self.queues[src, hop]
        return queue.pop(0) if queue else None

    def commit(self, moves):
        for src, hop, pkt in moves:
            route = self.traffic.routes[src]
            self.knowledge.learn(route[hop], pkt)
            self.history[pkt].append(hop)
            if hop + 1 == len(route) - 1:
                self.delivered[src] += 1
                self.knowledge.prune(pkt)
            else:
                self.queues[src, hop + 1].append(pkt)

    def occupancy(self):
        return {key: len(q) for key, q in self.queues.items() if q}


def _materialise(uses, traffic, plan, need):
    rep = _Replay(traffic, need)
    slots = []
    for primaries, pairs in plan:
        moves = []
        by_item = {}
        for i in primaries + [s for s, _ in pairs]:
            src, hop = uses.items[i]
            pkt = rep.take(src, hop)
            assert pkt is not None, "backlog plan left a transmitter empty"
            by_item[i] = pkt
            moves.append((src, hop, pkt))
        slot = [Transmission(uses.links[i], by_item[i], PRIMARY) for i in primaries]
        slot += [Transmission(uses.links[s], by_item[s], SECONDARY, uses.links[p])
                 for s, p in pairs]
        slots.append(_sort_slot(slot))
        rep.commit(moves)
    return tuple(slots)


def _hop_of(traffic, t):
    route = traffic.routes.get(t.packet.source)
    if route is None or t.link.tx not in route:
        return None
    hop = route.index(t.link.tx)
    if hop + 1 >= len(route) or route[hop + 1] != t.link.rx:
        return None
    return hop


def check_schedule(topo: Topology, schedule: Schedule, periods: int = 2) -> List[str]:
    """Replay ``schedule`` for ``periods`` periods from its backlog.

    Returns human-readable problems: inadmissible slots, transmitters with
    nothing to send, wrong delivery counts, non-periodic buffer levels or
    packets whose hops ran out of route order.
    """
    traffic = schedule.traffic
    rep = _Replay(traffic, schedule.backlog)
    start = rep.occupancy()
    problems = []
    for period in range(periods):
        before = Counter(rep.delivered)
        for idx, slot in enumerate(schedule.slots, 1):
            moves = []
            actual = []
            for t in slot:
                hop = _hop_of(traffic, t)
                if hop is None:
                    problems.append(f"period {period} slot {idx}: {t.link} not on route "
                                    f"of source {t.packet.source}")
                    continue
                pkt = rep.take(t.packet.source, hop)
                if pkt is None:
                    problems.append(f"period {period} slot {idx}: {node_label(t.link.tx)} "
                                    f"has no packet of source {t.packet.source}")
                    continue
                if period == 0 and pkt != t.packet:
                    problems.append(f"slot {idx}: expected {t.packet}, replay moved {pkt}")
                actual.append(t._replace(packet=pkt))
                moves.append((t.packet.source, hop, pkt))
            # pairings refer to links; re-key to the replayed packets
            for v in validate_slot(topo, actual, schedule.mode, rep.knowledge):
                problems.append(f"period {period} slot {idx}: {v.rule}: {v.detail}")
            rep.commit(moves)
        got = rep.delivered - before
        for src in traffic.sources:
            if got[src] != schedule.deliveries_per_period:
                problems.append(f"period {period}: source {src} delivered {got[src]}, "
                                f"expected {schedule.deliveries_per_period}")
        if rep.occupancy() != start:
            problems.append(f"period {period}: buffers do not return to the start state")
    for pkt, hops in rep.history.items():
        if hops != list(range(len(hops))):
            problems.append(f"packet {pkt} moved out of route order: {hops}")
    return problems


# -- reporting -----------------------------------------------------------------

@dataclass(frozen=True)
class CapacityReport:
    baseline_capacity: Fraction
    overlay_capacity: float
    gamma: float
    improvement: float
    overlay_mode_used: bool
    baseline: Schedule
    overlay: Schedule
    accounting: str = "period"

    @property
    def baseline_float(self) -> float:
        return float(self.baseline_capacity)


def effective_capacity(schedule: Schedule, gamma: float, accounting: str = "period") -> float:
    """Per-source capacity in units of B.

    ``period`` scales the whole period by gamma once any slot is cognitive;
    ``slot`` stretches only the cognitive slots by 1/gamma.
    """
    if not schedule.uses_overlay:
        return float(schedule.ratio)
    if accounting == "period":
        return float(schedule.ratio) * gamma
    if accounting == "slot":
        cog = schedule.cognitive_slots()
        duration = (schedule.period - cog) + cog / gamma
        return schedule.deliveries_per_period / duration
    raise ValueError(f"unknown accounting {accounting!r}")


def capacity_report(baseline: Schedule, overlay: Schedule, gamma: float,
                    accounting: str = "period") -> CapacityReport:
    if baseline.traffic.sources != overlay.traffic.sources or \
            dict(baseline.traffic.routes) != dict(overlay.traffic.routes):
        raise ValueError("baseline and overlay schedules serve different traffic")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    base = float(baseline.ratio)
    over = effective_capacity(overlay, gamma, accounting)
    if over < base:
        # the cognitive schedule does not pay off; run the baseline one
        over, overlay = base, baseline
    return CapacityReport(baseline.ratio, over, gamma, over / base - 1.0, overlay.uses_overlay,
                          baseline, overlay, accounting)

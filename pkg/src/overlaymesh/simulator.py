"""Slot-by-slot greedy simulation with saturated sources.

Each slot the simulator picks a maximal admissible set of transmissions
greedily, so its long-run throughput is a lower bound on what the exact
periodic search finds. It shares the admission rules with the scheduler.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, TextIO

from .scheduler import (KnowledgeState, Mode, Packet, PRIMARY, SECONDARY, Transmission,
                        format_slot, overlay_pairing_candidates, _sort_slot)
from .topology import Link, Topology, TrafficSpec, conflicts


@dataclass(frozen=True)
class SimPolicy:
    """How the greedy simulator fills a slot.

    ``fair_injection`` lets a source release a new packet only when no other
    source has released fewer; ``window`` caps the packets a source may have
    between itself and the gateway (None: the route's hop count). With
    ``interleave`` each candidate is tried as primary and then as secondary
    in one priority-ordered pass; otherwise secondaries are only considered
    after all primaries are fixed.
    """

    mode: Mode = Mode.BASELINE
    seed: Optional[int] = None
    fair_injection: bool = True
    window: Optional[int] = None
    interleave: bool = True


@dataclass
class SimState:
    clock: int = 0
    queues: Dict[int, List[Packet]] = field(default_factory=dict)
    knowledge: KnowledgeState = field(default_factory=KnowledgeState)
    delivered: Counter = field(default_factory=Counter)
    next_seq: Dict[int, int] = field(default_factory=dict)
    born: Dict[Packet, int] = field(default_factory=dict)
    last_slot: tuple = ()
    secondaries_used: int = 0


def _next_hop(traffic, packet, node):
    route = traffic.routes[packet.source]
    return route[route.index(node) + 1]


def _remaining(traffic, packet, node):
    route = traffic.routes[packet.source]
    return len(route) - 1 - route.index(node)


def _candidates(state, traffic, policy, rng):
    """Every (link, packet) move available this slot, in priority order.

    Priority is fewest hops left, then oldest packet, then smallest
    transmitter id (randomised among equals when a seed is given).
    """
    offers = []
    for node, queue in state.queues.items():
        heads = {}
        for pkt in queue:
            # arrival order, so the first packet seen per source is its oldest
            heads.setdefault(pkt.source, pkt)
        offers.extend((node, pkt) for pkt in heads.values())
    injected = {src: state.next_seq.get(src, 1) - 1 for src in traffic.sources}
    in_flight = Counter(pkt.source for q in state.queues.values() for pkt in q)
    floor = min(injected.values(), default=0)
    for src in traffic.sources:
        if policy.fair_injection and injected[src] > floor:
            continue
        window = policy.window if policy.window is not None else len(traffic.routes[src]) - 1
        if in_flight[src] >= window:
            continue
        offers.append((src, Packet(src, injected[src] + 1)))
    jitter = {n: rng.random() for n, _ in offers} if rng else {}

    def key(offer):
        node, pkt = offer
        born = state.born.get(pkt, state.clock + 1)
        return (_remaining(traffic, pkt, node), born, jitter.get(node, node), node, pkt)

    offers.sort(key=key)
    return [(Link(node, _next_hop(traffic, pkt, node)), pkt) for node, pkt in offers]


def select_slot(state: SimState, topo: Topology, traffic: TrafficSpec, policy: SimPolicy,
                rng: Optional[random.Random] = None) -> List[Transmission]:
    """Greedy admissible slot built from the priority-ordered offers."""
    offers = _candidates(state, traffic, policy, rng)
    overlay = Mode(policy.mode) == Mode.OVERLAY
    chosen: List[Transmission] = []
    busy = set()
    for link, pkt in offers:
        if link.tx in busy or link.rx in busy:
            continue
        if not any(conflicts(topo, link, t.link) for t in chosen):
            chosen.append(Transmission(link, pkt, PRIMARY))
            busy.update(link)
        elif overlay and policy.interleave:
            found = overlay_pairing_candidates(topo, chosen, state.knowledge, [(link, pkt)])
            if found:
                chosen.append(found[0])
                busy.update(link)
    if overlay and not policy.interleave:
        for link, pkt in offers:
            if link.tx in busy or link.rx in busy:
                continue
            found = overlay_pairing_candidates(topo, chosen, state.knowledge, [(link, pkt)])
            if found:
                chosen.append(found[0])
                busy.update(link)
    return chosen


def step(state: SimState, topo: Topology, traffic: TrafficSpec, policy: SimPolicy,
         rng: Optional[random.Random] = None) -> SimState:
    """Advance one slot in place and return the state."""
    slot = select_slot(state, topo, traffic, policy, rng)
    state.clock += 1
    for t in slot:
        node, pkt = t.link.tx, t.packet
        if node == pkt.source and pkt.seq == state.next_seq.get(node, 1):
            state.next_seq[node] = pkt.seq + 1
            state.born[pkt] = state.clock
        else:
            state.queues[node].remove(pkt)
        state.knowledge.learn(node, pkt)
    for t in slot:
        pkt = t.packet
        if t.link.rx == topo.gateway:
            state.delivered[pkt.source] += 1
            state.knowledge.prune(pkt)
            state.born.pop(pkt, None)
        else:
            state.queues.setdefault(t.link.rx, []).append(pkt)
    state.queues = {n: q for n, q in state.queues.items() if q}
    state.last_slot = _sort_slot(slot)
    state.secondaries_used += sum(1 for t in slot if t.kind == SECONDARY)
    return state


@dataclass(frozen=True)
class SimReport:
    mode: Mode
    window: int
    deliveries: Dict[int, int]
    gamma: float
    overlay_used: bool
    digest: str

    def packets_per_slot(self, source: int) -> float:
        return self.deliveries[source] / self.window

    def effective_rate(self, source: int) -> float:
        scale = self.gamma if self.overlay_used else 1.0
        return self.packets_per_slot(source) * scale

    @property
    def min_packets_per_slot(self) -> float:
        return min(self.packets_per_slot(s) for s in self.deliveries)

    def to_csv(self) -> str:
        lines = ["source,mode,packets_per_slot,effective_rate_over_B"]
        for src in sorted(self.deliveries):
            lines.append(f"{src},{self.mode.value},{self.packets_per_slot(src):.6f},"
                         f"{self.effective_rate(src):.6f}")
        return "\n".join(lines) + "\n"


def run(topo: Topology, traffic: TrafficSpec, policy: SimPolicy, n_slots: int,
        warmup: int = 50, gamma: float = 1.0, trace: Optional[TextIO] = None) -> SimReport:
    """Simulate ``n_slots`` slots and measure deliveries after ``warmup``.

    The digest hashes every slot's serialisation, so two runs agree on it
    exactly when they made the same choices.
    """
    if not 0 <= warmup < n_slots:
        raise ValueError(f"need 0 <= warmup < n_slots, got warmup={warmup}, n_slots={n_slots}")
    rng = random.Random(policy.seed) if policy.seed is not None else None
    state = SimState()
    digest = hashlib.sha256()
    at_warmup = Counter()
    used_overlay = False
    for i in range(1, n_slots + 1):
        step(state, topo, traffic, policy, rng)
        line = format_slot(i, state.last_slot)
        digest.update(line.encode())
        if trace is not None:
            trace.write(line + "\n")
        if i == warmup:
            at_warmup = Counter(state.delivered)
        if i > warmup and any(t.kind == SECONDARY for t in state.last_slot):
            used_overlay = True
    got = {s: state.delivered[s] - at_warmup[s] for s in traffic.sources}
    return SimReport(Mode(policy.mode), n_slots - warmup, got, gamma, used_overlay,
                     digest.hexdigest())

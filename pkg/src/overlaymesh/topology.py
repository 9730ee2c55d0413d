"""Mesh topologies under the discrete transmission/interference range model.

Distances are measured in transmission-range radii: two nodes can talk when
they are at most 1 apart and a node disturbs everything within
``interference_factor`` of itself.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Tuple

GATEWAY = 0
GATEWAY_TOKEN = "GW"
DEFAULT_INTERFERENCE_FACTOR = 3.0
_EPS = 1e-9

# The regular layout has eight radial slots; fewer branches use a subset so
# node ids stay comparable across 2/4/8-branch variants.
_REGULAR_SLOTS = {2: (1, 5), 4: (1, 3, 5, 7), 8: (1, 2, 3, 4, 5, 6, 7, 8)}


class TopologyError(ValueError):
    """Raised when a topology is malformed or violates an invariant.

    ``violations`` holds every problem found, each as ``(line, message)``;
    ``line`` is None when the problem has no source location.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [(None, violations)]
        self.violations = list(violations)
        super().__init__("; ".join(_fmt_violation(v) for v in self.violations))


class TopologyParseError(TopologyError):
    pass


def _fmt_violation(v):
    line, msg = v
    return msg if line is None else f"line {line}: {msg}"


class Link(NamedTuple):
    tx: int
    rx: int

    def __str__(self):
        return f"{node_label(self.tx)}->{node_label(self.rx)}"


def node_label(node: int) -> str:
    return GATEWAY_TOKEN if node == GATEWAY else str(node)


@dataclass(frozen=True)
class Topology:
    nodes: Tuple[int, ...]
    gateway: int
    adjacency: Mapping[int, FrozenSet[int]]
    interference: Mapping[int, FrozenSet[int]]
    coords: Optional[Mapping[int, Tuple[float, float]]] = None
    interference_factor: float = DEFAULT_INTERFERENCE_FACTOR
    routes: Mapping[int, Tuple[int, ...]] = field(default_factory=dict)

    def has_link(self, link: Link) -> bool:
        return link.tx != link.rx and link.rx in self.adjacency.get(link.tx, ())

    def links(self) -> List[Link]:
        return [Link(u, v) for u in self.nodes for v in sorted(self.adjacency[u])]

    def distance(self, u: int, v: int) -> float:
        if self.coords is None:
            raise TopologyError("topology has no coordinates")
        (x1, y1), (x2, y2) = self.coords[u], self.coords[v]
        return math.hypot(x1 - x2, y1 - y2)


@dataclass(frozen=True)
class TrafficSpec:
    sources: Tuple[int, ...]
    routes: Mapping[int, Tuple[int, ...]]

    def hops(self, source: int) -> List[Link]:
        route = self.routes[source]
        return [Link(route[i], route[i + 1]) for i in range(len(route) - 1)]


def _geometric(coords, gateway, factor, routes=None) -> Topology:
    ids = sorted(coords)
    adj = {u: set() for u in ids}
    inter = {u: set() for u in ids}
    for i, u in enumerate(ids):
        for v in ids[i + 1:]:
            d = math.hypot(coords[u][0] - coords[v][0], coords[u][1] - coords[v][1])
            if d <= 1.0 + _EPS:
                adj[u].add(v)
                adj[v].add(u)
            if d <= factor + _EPS:
                inter[u].add(v)
                inter[v].add(u)
    topo = Topology(
        nodes=tuple(ids),
        gateway=gateway,
        adjacency={u: frozenset(s) for u, s in adj.items()},
        interference={u: frozenset(s) for u, s in inter.items()},
        coords=dict(coords),
        interference_factor=float(factor),
        routes=dict(routes or {}),
    )
    _raise_if(validate_topology(topo))
    return topo


def from_coordinates(coords: Mapping[int, Tuple[float, float]], gateway: int = GATEWAY,
                     interference_factor: float = DEFAULT_INTERFERENCE_FACTOR) -> Topology:
    return _geometric(coords, gateway, interference_factor)


def chain_topology(n_nodes: int,
                   interference_factor: float = DEFAULT_INTERFERENCE_FACTOR) -> Topology:
    """Nodes 1..n on a line at unit spacing with the gateway at the origin."""
    if n_nodes < 1:
        raise TopologyError(f"a chain needs at least one node, got {n_nodes}")
    coords = {GATEWAY: (0.0, 0.0)}
    coords.update({i: (float(i), 0.0) for i in range(1, n_nodes + 1)})
    return _geometric(coords, GATEWAY, interference_factor)


def regular_topology(branches: int, depth: int,
                     interference_factor: float = DEFAULT_INTERFERENCE_FACTOR) -> Topology:
    """Radial chains around the gateway, numbered ring by ring.

    The layout has eight angular slots 45 degrees apart; node ``8*(d-1)+s``
    sits at hop distance ``d`` on slot ``s``. Two branches use slots 1 and 5
    (collinear), four use the odd slots.
    """
    if branches not in _REGULAR_SLOTS:
        raise TopologyError(f"branches must be one of 2, 4, 8; got {branches}")
    if depth < 1:
        raise TopologyError(f"depth must be at least 1, got {depth}")
    coords = {GATEWAY: (0.0, 0.0)}
    for d in range(1, depth + 1):
        for s in _REGULAR_SLOTS[branches]:
            theta = (s - 1) * math.pi / 4
            x, y = d * math.cos(theta), d * math.sin(theta)
            # snap round-off so axis-aligned nodes compare exactly
            coords[8 * (d - 1) + s] = (round(x, 12) + 0.0, round(y, 12) + 0.0)
    return _geometric(coords, GATEWAY, interference_factor)


def validate_topology(topo: Topology, lines: Optional[Mapping] = None) -> List[Tuple]:
    """Return every invariant violation of ``topo`` as ``(line, message)``."""
    lines = lines or {}
    out = []
    nodes = set(topo.nodes)
    if topo.gateway not in nodes:
        out.append((lines.get("gateway"), f"gateway {topo.gateway} is not a node"))
        return out
    for u in topo.nodes:
        for v in sorted(topo.interference.get(u, ())):
            if v not in nodes:
                out.append((lines.get(("inter", u)),
                            f"node {node_label(u)} lists unknown node {v}"))
            elif v == u:
                out.append((lines.get(("inter", u)), f"node {node_label(u)} lists itself"))
            elif u not in topo.interference.get(v, ()):
                out.append((lines.get(("inter", u)),
                            f"asymmetric interference: {node_label(u)} lists {node_label(v)} "
                            f"but {node_label(v)} does not list {node_label(u)}"))
        for v in sorted(topo.adjacency.get(u, ())):
            if v not in nodes or v == u:
                out.append((lines.get(("link", u, v)), f"bad link {node_label(u)}-{v}"))
            elif v not in topo.interference.get(u, ()):
                out.append((lines.get(("link", u, v)),
                            f"link {node_label(u)}-{node_label(v)} is outside interference range"))
    if topo.coords is not None:
        for i, u in enumerate(topo.nodes):
            for v in topo.nodes[i + 1:]:
                d = topo.distance(u, v)
                if (d <= 1.0 + _EPS) != (v in topo.adjacency[u]):
                    out.append((None, f"adjacency of {u},{v} disagrees with distance {d:.3f}"))
                if (d <= topo.interference_factor + _EPS) != (v in topo.interference[u]):
                    out.append((None, f"interference of {u},{v} disagrees with distance {d:.3f}"))
    reach = _hops_to_gateway(topo)
    for u in topo.nodes:
        if u not in reach:
            out.append((lines.get(("node", u)),
                        f"node {node_label(u)} has no path to the gateway"))
    for src, route in topo.routes.items():
        out.extend((lines.get(("route", src)), msg) for msg in _route_problems(topo, src, route))
    return out


def _route_problems(topo, src, route):
    probs = []
    if not route or route[0] != src or route[-1] != topo.gateway:
        probs.append(f"route of {node_label(src)} must start at it and end at the gateway")
    if len(set(route)) != len(route):
        probs.append(f"route of {node_label(src)} revisits a node")
    for u, v in zip(route, route[1:]):
        if v not in topo.adjacency.get(u, ()):
            probs.append(f"route of {node_label(src)} uses non-link "
                         f"{node_label(u)}->{node_label(v)}")
    return probs


def _raise_if(violations):
    if violations:
        raise TopologyError(violations)


def _hops_to_gateway(topo):
    dist = {topo.gateway: 0}
    queue = deque([topo.gateway])
    while queue:
        u = queue.popleft()
        for v in topo.adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def interference_region(topo: Topology, link: Link) -> FrozenSet[int]:
    """Nodes silenced while ``link`` is active, endpoints included."""
    if not topo.has_link(link):
        raise TopologyError(f"{link} is not a link of the topology")
    return topo.interference[link.tx] | topo.interference[link.rx] | {link.tx, link.rx}


def conflicts(topo: Topology, l1: Link, l2: Link) -> bool:
    region = interference_region(topo, l1)
    if not topo.has_link(l2):
        raise TopologyError(f"{l2} is not a link of the topology")
    return l2.tx in region or l2.rx in region


def shortest_route(topo: Topology, src: int) -> Tuple[int, ...]:
    """Minimum-hop path to the gateway, preferring the smallest next hop."""
    if src == topo.gateway:
        raise TopologyError("the gateway has no route")
    if src not in topo.adjacency:
        raise TopologyError(f"unknown node {src}")
    dist = _hops_to_gateway(topo)
    if src not in dist:
        raise TopologyError(f"node {src} cannot reach the gateway")
    route = [src]
    u = src
    while u != topo.gateway:
        u = min(v for v in topo.adjacency[u] if dist.get(v) == dist[u] - 1)
        route.append(u)
    return tuple(route)


def traffic_spec(topo: Topology, sources: Iterable[int]) -> TrafficSpec:
    """Routes for ``sources``: the topology's pinned route if any, else shortest."""
    sources = tuple(sources)
    if len(set(sources)) != len(sources):
        raise TopologyError("duplicate source")
    routes = {}
    for s in sources:
        route = tuple(topo.routes[s]) if s in topo.routes else shortest_route(topo, s)
        probs = _route_problems(topo, s, route)
        if probs:
            raise TopologyError(probs)
        routes[s] = route
    return TrafficSpec(sources, routes)


# -- text format -------------------------------------------------------------

_SECTIONS = ("nodes", "gateway", "links", "interference", "routes")


def _parse_id(tok, line):
    tok = tok.strip()
    if tok.upper() == GATEWAY_TOKEN:
        return GATEWAY
    if not re.fullmatch(r"\d+", tok):
        raise TopologyParseError([(line, f"bad node id {tok!r}")])
    return int(tok)


def _parse_id_list(text, line):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            if a > b:
                raise TopologyParseError([(line, f"empty range {part!r}")])
            out.extend(range(a, b + 1))
        else:
            out.append(_parse_id(part, line))
    return out


def parse_topology(text: str,
                   interference_factor: float = DEFAULT_INTERFERENCE_FACTOR) -> Topology:
    """Parse the line-oriented topology format.

    Id lists accept inclusive ``a-b`` ranges. Problems found after parsing
    are reported together, each tagged with its source line.
    """
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            current = m.group(1).lower()
            if current not in _SECTIONS:
                raise TopologyParseError([(lineno, f"unknown section [{current}]")])
            if current in sections:
                raise TopologyParseError([(lineno, f"duplicate section [{current}]")])
            sections[current] = []
            continue
        if current is None:
            raise TopologyParseError([(lineno, "content before first section header")])
        sections[current].append((lineno, line))

    if not sections.get("nodes"):
        raise TopologyParseError([(None, "missing or empty [nodes] section")])
    if not sections.get("gateway"):
        raise TopologyParseError([(None, "missing or empty [gateway] section")])

    lines = {}
    coords = {}
    bare = []
    for lineno, line in sections["nodes"]:
        parts = line.split()
        node = _parse_id(parts[0], lineno)
        if node in coords or node in bare:
            raise TopologyParseError([(lineno, f"duplicate node {node_label(node)}")])
        lines[("node", node)] = lineno
        if len(parts) == 1:
            bare.append(node)
        elif len(parts) == 3:
            try:
                coords[node] = (float(parts[1]), float(parts[2]))
            except ValueError:
                raise TopologyParseError([(lineno, "bad coordinates")]) from None
        else:
            raise TopologyParseError([(lineno, "expected 'id' or 'id x y'")])
    if coords and bare:
        raise TopologyParseError([(None, "nodes mix coordinates and bare ids")])

    (gw_line, gw_text), *rest = sections["gateway"]
    if rest:
        raise TopologyParseError([(rest[0][0], "only one gateway is supported")])
    gateway = _parse_id(gw_text, gw_line)
    node_ids = set(coords) | set(bare)
    if gateway not in node_ids:
        raise TopologyParseError([(gw_line, f"unknown gateway {gw_text!r}")])
    lines["gateway"] = gw_line

    routes = {}
    for lineno, line in sections.get("routes", []):
        if ":" not in line:
            raise TopologyParseError([(lineno, "expected 'src: hop,hop,...,GW'")])
        head, tail = line.split(":", 1)
        src = _parse_id(head, lineno)
        routes[src] = (src, *_parse_id_list(tail, lineno))
        lines[("route", src)] = lineno

    explicit = "links" in sections or "interference" in sections
    if coords:
        if explicit:
            raise TopologyParseError(
                [(None, "coordinates cannot be combined with [links]/[interference]")])
        try:
            return _geometric(coords, gateway, interference_factor, routes)
        except TopologyError as exc:
            raise TopologyError([(lines.get(("route", _route_src(m)), l), m)
                                 for l, m in exc.violations]) from None

    if "links" not in sections or "interference" not in sections:
        raise TopologyParseError(
            [(None, "bare node ids require [links] and [interference] sections")])

    adj = {u: set() for u in node_ids}
    for lineno, line in sections["links"]:
        parts = re.split(r"[\s,-]+", line.strip())
        if len(parts) != 2:
            raise TopologyParseError([(lineno, "expected 'a b'")])
        u, v = (_parse_id(p, lineno) for p in parts)
        for n in (u, v):
            if n not in node_ids:
                raise TopologyParseError([(lineno, f"link names unknown node {n}")])
        adj[u].add(v)
        adj[v].add(u)
        lines[("link", u, v)] = lines[("link", v, u)] = lineno

    inter = {u: set() for u in node_ids}
    for lineno, line in sections["interference"]:
        if ":" not in line:
            raise TopologyParseError([(lineno, "expected 'id: id,id,...'")])
        head, tail = line.split(":", 1)
        u = _parse_id(head, lineno)
        if u not in node_ids:
            raise TopologyParseError([(lineno, f"interference row for unknown node {u}")])
        if ("inter", u) in lines:
            raise TopologyParseError([(lineno, f"duplicate interference row {node_label(u)}")])
        lines[("inter", u)] = lineno
        inter[u].update(_parse_id_list(tail, lineno))

    topo = Topology(
        nodes=tuple(sorted(node_ids)),
        gateway=gateway,
        adjacency={u: frozenset(s) for u, s in adj.items()},
        interference={u: frozenset(s) for u, s in inter.items()},
        coords=None,
        interference_factor=float(interference_factor),
        routes=routes,
    )
    _raise_if(validate_topology(topo, lines))
    return topo


def _route_src(msg):
    m = re.match(r"route of (\w+)", msg)
    if not m:
        return None
    return GATEWAY if m.group(1) == GATEWAY_TOKEN else int(m.group(1))


def load_topology(path) -> Topology:
    return parse_topology(Path(path).read_text(encoding="utf-8"))


def dump_topology(topo: Topology) -> str:
    """Serialise to the text format; geometric topologies keep coordinates."""
    out = ["[nodes]"]
    for u in topo.nodes:
        if topo.coords is not None:
            x, y = topo.coords[u]
            out.append(f"{node_label(u)} {x:.12g} {y:.12g}")
        else:
            out.append(node_label(u))
    out += ["", "[gateway]", node_label(topo.gateway)]
    if topo.coords is None:
        out += ["", "[links]"]
        for u in topo.nodes:
            out += [f"{node_label(u)} {node_label(v)}" for v in sorted(topo.adjacency[u]) if v > u]
        out += ["", "[interference]"]
        for u in topo.nodes:
            row = ",".join(node_label(v) for v in sorted(topo.interference[u]))
            out.append(f"{node_label(u)}: {row}")
    if topo.routes:
        out += ["", "[routes]"]
        for src in sorted(topo.routes):
            hops = ",".join(node_label(v) for v in topo.routes[src][1:])
            out.append(f"{node_label(src)}: {hops}")
    return "\n".join(out) + "\n"


def table_i_path() -> Path:
    """Location of the bundled arbitrary-topology fixture."""
    return Path(__file__).with_name("data") / "tableI.topo"


def table_i_topology() -> Topology:
    return load_topology(table_i_path())

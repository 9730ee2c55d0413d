import functools
import math

from overlaymesh.scheduler import Mode, best_periodic_schedule
from overlaymesh.topology import (GATEWAY, chain_topology, from_coordinates, regular_topology,
                                  table_i_topology, traffic_spec)

TABLE_I_SOURCES = (4, 5, 12, 22, 24, 26)


@functools.lru_cache(maxsize=None)
def fixture_case(name):
    """(topology, traffic) for the named reference scenario."""
    if name == "chain":
        topo = chain_topology(8)
        return topo, traffic_spec(topo, [8])
    if name == "chain-f1":
        topo = chain_topology(8, interference_factor=1)
        return topo, traffic_spec(topo, [8])
    if name.startswith("regular"):
        b = int(name[len("regular"):])
        topo = regular_topology(b, 5)
        sources = [33, 37] if b == 2 else [n for n in topo.nodes if n > 32]
        return topo, traffic_spec(topo, sources)
    if name == "table":
        topo = table_i_topology()
        return topo, traffic_spec(topo, TABLE_I_SOURCES)
    raise KeyError(name)


@functools.lru_cache(maxsize=None)
def exact(name, mode):
    topo, traffic = fixture_case(name)
    return best_periodic_schedule(topo, traffic, Mode(mode))


def geometric_conflict(topo, l1, l2):
    """Direct oracle: shared node, or any endpoint pair within interference range."""
    if set(l1) & set(l2):
        return True
    r = topo.interference_factor
    return any(math.dist(topo.coords[u], topo.coords[v]) <= r + 1e-9 for u in l1 for v in l2)


def random_geometric(rng, n_max=10, factor=3.0):
    """Connected random layout grown by unit-ish steps from the gateway."""
    n = rng.randint(1, n_max - 1)
    coords = {GATEWAY: (0.0, 0.0)}
    while len(coords) <= n:
        anchor = coords[rng.choice(list(coords))]
        ang, d = rng.uniform(0, 2 * math.pi), rng.uniform(0.3, 1.0)
        p = (round(anchor[0] + d * math.cos(ang), 6), round(anchor[1] + d * math.sin(ang), 6))
        if all(math.dist(p, q) > 0.1 for q in coords.values()):
            coords[len(coords)] = p
    return from_coordinates(coords, interference_factor=factor)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

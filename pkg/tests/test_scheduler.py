from fractions import Fraction

import pytest

from conftest import exact, fixture_case
from overlaymesh.scheduler import (PRIMARY, SECONDARY, KnowledgeState, Mode, NoFeasibleSchedule,
                                   Packet, Schedule, SearchBounds, Transmission,
                                   best_periodic_schedule, capacity_report, check_schedule,
                                   effective_capacity, format_schedule,
                                   overlay_pairing_candidates, validate_slot)
from overlaymesh.topology import GATEWAY as GW, Link, TopologyError, chain_topology, traffic_spec

CHAIN = chain_topology(8)


def tx(a, b, src=8, seq=1, paired=None):
    if paired is None:
        return Transmission(Link(a, b), Packet(src, seq), PRIMARY)
    return Transmission(Link(a, b), Packet(src, seq), SECONDARY, Link(*paired))


class TestValidateSlot:
    def test_cognitive_pair_ok(self):
        know = KnowledgeState({8: [Packet(8, 1)]})
        slot = [tx(6, 5, seq=1), tx(8, 7, seq=3, paired=(6, 5))]
        assert validate_slot(CHAIN, slot, Mode.OVERLAY, know) == []

    def test_same_pair_in_baseline(self):
        slot = [tx(6, 5, seq=1), tx(8, 7, seq=3)]
        (v,) = validate_slot(CHAIN, slot, Mode.BASELINE)
        assert v.rule == "conflict"
        assert {t.link for t in v.transmissions} == {Link(6, 5), Link(8, 7)}

    def test_secondary_in_baseline_mode(self):
        know = KnowledgeState({8: [Packet(8, 1)]})
        slot = [tx(6, 5, seq=1), tx(8, 7, seq=3, paired=(6, 5))]
        rules = {v.rule for v in validate_slot(CHAIN, slot, Mode.BASELINE, know)}
        assert "mode" in rules

    def test_half_duplex(self):
        (v,) = validate_slot(CHAIN, [tx(5, 4), tx(4, 3, seq=2)], Mode.BASELINE)
        assert v.rule == "half-duplex"

    def test_missing_knowledge(self):
        slot = [tx(6, 5, seq=1), tx(8, 7, seq=3, paired=(6, 5))]
        (v,) = validate_slot(CHAIN, slot, Mode.OVERLAY, KnowledgeState())
        assert v.rule == "knowledge"

    def test_secondary_hit_by_second_primary(self):
        # 7->6 is paired with 5->4 but also falls in the region of 10->9
        topo = chain_topology(12)
        know = KnowledgeState({7: [Packet(12, 1)]})
        slot = [tx(5, 4, 12, 1), tx(10, 9, 12, 5), tx(7, 6, 12, 3, paired=(5, 4))]
        rules = [v.rule for v in validate_slot(topo, slot, Mode.OVERLAY, know)]
        assert rules == ["conflict"]

    def test_two_secondaries_on_one_primary(self):
        topo = chain_topology(12)
        know = KnowledgeState({7: [Packet(12, 1)], 9: [Packet(12, 1)]})
        slot = [tx(5, 4, 12, 1), tx(7, 6, 12, 3, paired=(5, 4)), tx(9, 8, 12, 4, paired=(5, 4))]
        rules = {v.rule for v in validate_slot(topo, slot, Mode.OVERLAY, know)}
        assert "pairing" in rules

    def test_secondary_without_conflict(self):
        know = KnowledgeState({8: [Packet(8, 1)]})
        slot = [tx(3, 2, seq=1), tx(8, 7, seq=3, paired=(3, 2))]
        rules = {v.rule for v in validate_slot(CHAIN, slot, Mode.OVERLAY, know)}
        assert rules == {"pairing"}

    def test_not_a_link(self):
        (v,) = validate_slot(CHAIN, [tx(8, 6)], Mode.BASELINE)
        assert v.rule == "link"

    def test_empty_slot(self):
        assert validate_slot(CHAIN, [], Mode.OVERLAY) == []


class TestPairingCandidates:
    def test_chain_example(self):
        know = KnowledgeState({8: [Packet(8, 1)], 7: [Packet(8, 1)]})
        slot = [tx(6, 5, seq=1)]
        (c,) = overlay_pairing_candidates(CHAIN, slot, know, [(Link(8, 7), Packet(8, 2))])
        assert c.kind == SECONDARY and c.paired == Link(6, 5)
        assert validate_slot(CHAIN, slot + [c], Mode.OVERLAY, know) == []

    def test_no_knowledge(self):
        offers = [(Link(8, 7), Packet(8, 2)), (Link(7, 6), Packet(8, 1))]
        assert overlay_pairing_candidates(CHAIN, [tx(5, 4)], KnowledgeState(), offers) == []

    def test_primary_already_paired(self):
        topo = chain_topology(12)
        know = KnowledgeState({n: [Packet(12, 1)] for n in range(5, 13)})
        slot = [tx(5, 4, 12, 1), tx(7, 6, 12, 3, paired=(5, 4))]
        assert overlay_pairing_candidates(topo, slot, know, [(Link(9, 8), Packet(12, 4))]) == []

    def test_gateway_subnetwork_of_node_12(self):
        topo, traffic = fixture_case("table")
        # every node knows every packet: only geometry can forbid pairing
        know = KnowledgeState({n: [Packet(12, 1)] for n in topo.nodes})
        offers = [(link, Packet(src, 2)) for src in traffic.sources
                  for link in traffic.hops(src)]
        for primary in traffic.hops(12):
            slot = [Transmission(primary, Packet(12, 1), PRIMARY)]
            found = overlay_pairing_candidates(topo, slot, know, offers)
            assert all(c.link.tx not in (12, 8) for c in found)
        # with causal knowledge only route 12 knows its packets, and none can pair
        know = KnowledgeState({12: [Packet(12, 1)], 8: [Packet(12, 1)]})
        for primary in traffic.hops(12):
            slot = [Transmission(primary, Packet(12, 1), PRIMARY)]
            assert overlay_pairing_candidates(topo, slot, know, offers) == []


class TestBestSchedule:
    @pytest.mark.parametrize("n", range(6, 13))
    def test_chain_closed_forms(self, n):
        for factor, expected in ((3, Fraction(1, 5)), (1, Fraction(1, 3))):
            topo = chain_topology(n, interference_factor=factor)
            s = best_periodic_schedule(topo, traffic_spec(topo, [n]), Mode.BASELINE)
            assert s.ratio == expected, (n, factor)

    def test_chain_reference(self):
        assert exact("chain", "baseline").ratio == Fraction(1, 5)
        over = exact("chain", "overlay")
        assert (over.deliveries_per_period, over.period) == (2, 7)
        assert over.uses_overlay
        assert exact("chain-f1", "baseline").ratio == Fraction(1, 3)

    def test_lp_bound_is_tight_on_chain(self):
        for mode in ("baseline", "overlay"):
            s = exact("chain", mode)
            assert s.rate_upper_bound == s.ratio

    @pytest.mark.parametrize("name", ["chain", "chain-f1", "regular2", "table"])
    @pytest.mark.parametrize("mode", ["baseline", "overlay"])
    def test_schedules_replay_cleanly(self, name, mode):
        topo, _ = fixture_case(name)
        s = exact(name, mode)
        assert check_schedule(topo, s, periods=3) == []
        assert s.period <= SearchBounds().t_max

    def test_overlay_never_below_baseline(self):
        for name in ("chain", "chain-f1", "regular2", "table"):
            assert exact(name, "overlay").ratio >= exact(name, "baseline").ratio

    def test_deterministic(self):
        topo, traffic = fixture_case("chain")
        a = best_periodic_schedule(topo, traffic, Mode.OVERLAY)
        b = best_periodic_schedule(topo, traffic, Mode.OVERLAY)
        assert format_schedule(a) == format_schedule(b)

    def test_dump_format(self):
        text = format_schedule(exact("chain", "overlay"))
        lines = text.splitlines()
        assert lines[0] == "# mode=overlay period=7 deliveries_per_period=2"
        assert [ln.split(":")[0] for ln in lines[1:]] == [f"slot {i}" for i in range(1, 8)]
        assert "[S(" in text and "[P]" in text

    def test_bounds_too_small(self):
        topo, traffic = fixture_case("chain")
        with pytest.raises(NoFeasibleSchedule):
            best_periodic_schedule(topo, traffic, Mode.BASELINE, SearchBounds(t_max=4))
        with pytest.raises(NoFeasibleSchedule):
            best_periodic_schedule(topo, traffic, Mode.BASELINE, SearchBounds(inflight_max=1))

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            SearchBounds(t_max=0)

    def test_no_sources(self):
        topo, _ = fixture_case("chain")
        with pytest.raises(NoFeasibleSchedule):
            best_periodic_schedule(topo, traffic_spec(topo, []), Mode.BASELINE)

    def test_duplicate_sources(self):
        with pytest.raises(TopologyError):
            traffic_spec(CHAIN, [8, 8])

    def test_table_subnetwork_never_cognitive(self):
        s = exact("table", "overlay")
        for slot in s.slots:
            for t in slot:
                if t.kind == SECONDARY:
                    assert t.link.tx not in (12, 8)
                    assert t.paired not in (Link(12, 8), Link(8, GW))

    def test_packets_follow_routes(self):
        s = exact("chain", "overlay")
        route = s.traffic.routes[8]
        for slot in s.slots:
            for t in slot:
                i = route.index(t.link.tx)
                assert route[i + 1] == t.link.rx

    def test_check_schedule_catches_tampering(self):
        s = exact("chain", "baseline")
        broken = Schedule(s.mode, s.traffic, s.slots[:-1], s.deliveries_per_period, s.backlog)
        assert check_schedule(CHAIN, broken) != []


class TestCapacity:
    def _sched(self, k, t, cognitive, topo_name="chain"):
        _, traffic = fixture_case(topo_name)
        link = Link(8, 7)
        kind = SECONDARY if cognitive else PRIMARY
        slots = [(Transmission(link, Packet(8, 1), kind, link if cognitive else None),)]
        slots += [()] * (t - 1)
        return Schedule(Mode.OVERLAY if cognitive else Mode.BASELINE, traffic, tuple(slots), k)

    def test_chain_improvement(self):
        rep = capacity_report(self._sched(1, 5, False), self._sched(2, 7, True), 0.95)
        assert rep.improvement == pytest.approx(0.95 * 10 / 7 - 1)
        assert round(100 * rep.improvement, 1) == 35.7
        assert rep.overlay_capacity == pytest.approx(0.95 * 2 / 7)
        assert rep.overlay_mode_used

    def test_regular_improvement(self):
        rep = capacity_report(self._sched(1, 5, False), self._sched(1, 4, True), 0.95)
        assert rep.improvement == pytest.approx(0.1875)

    def test_identical(self):
        s = self._sched(1, 5, False)
        rep = capacity_report(s, s, 1.0)
        assert rep.improvement == 0.0

    def test_fallback_to_baseline(self):
        base, over = self._sched(1, 5, False), self._sched(1, 5, True)
        rep = capacity_report(base, over, 0.9)
        assert rep.improvement == 0.0
        assert rep.overlay is base and not rep.overlay_mode_used

    def test_slot_accounting(self):
        over = self._sched(2, 7, True)
        # one cognitive slot stretched by 1/gamma
        assert effective_capacity(over, 0.5, "slot") == pytest.approx(2 / 8)
        assert effective_capacity(over, 0.5, "period") == pytest.approx(1 / 7)

    def test_mismatched_traffic(self):
        with pytest.raises(ValueError):
            capacity_report(self._sched(1, 5, False), exact("table", "overlay"), 0.95)

    @pytest.mark.parametrize("gamma", [0, 1.5])
    def test_gamma_domain(self, gamma):
        s = self._sched(1, 5, False)
        with pytest.raises(ValueError):
            capacity_report(s, s, gamma)

    def test_exact_reference_values(self):
        rep = capacity_report(exact("chain", "baseline"), exact("chain", "overlay"), 0.95)
        assert rep.baseline_capacity == Fraction(1, 5)
        assert rep.overlay_capacity == pytest.approx(0.2714, abs=1e-4)

from collections import Counter, defaultdict
from dataclasses import replace

import pytest

from hubplatoon.coordination import SchemeKind
from hubplatoon.errors import InternalConsistencyError
from hubplatoon.network import (
    EconomicParams,
    Scenario,
    ScenarioConfig,
    Truck,
    make_scenario,
    network_from_positions,
    route_from_hubs,
)
from hubplatoon.sim import (
    EventQueue,
    PlatoonRecord,
    compare_schemes,
    comparison_rows,
    edge_traversals,
    formation_rate,
    fuel_saving_fraction,
    platooning_rate,
    realized_fleet_reward,
    run_simulation,
    system_platooning_rate,
    write_comparison,
    write_outputs,
)

TOL = 1e-9
# A straight line of hubs 80 km apart: every segment takes exactly one hour.
LINE = network_from_positions([(80.0 * i, 0.0) for i in range(4)], [(0, 1), (1, 2), (2, 3)], 80.0)


def line_truck(tid, hubs, start, fleet, slack=600):
    route = route_from_hubs(LINE, hubs)
    return Truck(tid, fleet, route, start, start + route.travel_time + slack)


def scenario(*trucks, econ=None):
    return Scenario(LINE, tuple(trucks), econ or EconomicParams(), 0)


def rebuild_departures(run, sc):
    """Realized departures per truck from the decision stream alone."""
    by_truck = defaultdict(dict)
    for d in run.decisions:
        by_truck[d.truck][d.hub_index] = d.time + d.committed_wait
    return {t.id: [by_truck[t.id][k] for k in range(len(t.route.edges))] for t in sc.trucks}


def independent_grouping(departures, sc, same_fleet):
    groups = defaultdict(set)
    for t in sc.trucks:
        for e, dep in zip(t.route.edges, departures[t.id]):
            groups[(e.source, e.target, dep, t.fleet if same_fleet else -1)].add(t.id)
    return sorted((k[0], k[1], k[2], tuple(sorted(v))) for k, v in groups.items() if len(v) > 1)


class TestEventQueue:
    def test_ordering(self):
        q = EventQueue()
        for item in [(5, 2, 0, 0), (5, 1, 1, 0), (5, 1, 0, 1), (3, 9, 1, 0)]:
            q.push(*item)
        assert [q.pop() for _ in range(4)] == [(3, 9, 1, 0), (5, 1, 0, 1), (5, 1, 1, 0), (5, 2, 0, 0)]

    def test_no_time_travel(self):
        q = EventQueue()
        q.push(10, 0, 0, 0)
        q.pop()
        q.push(5, 0, 0, 0)
        with pytest.raises(InternalConsistencyError):
            q.pop()


class TestHandTraces:
    def test_zero_trucks(self):
        run = run_simulation(scenario(), "predictive")
        assert run.platoons == [] and run.decisions == []
        assert run.report.total_reward == 0.0
        assert run.report.size_histogram == {}

    def test_two_cross_fleet_trucks_platoon_every_edge(self):
        sc = scenario(line_truck(0, [0, 1, 2], 30000, 0), line_truck(1, [0, 1, 2], 30000, 1))
        for scheme in ("predictive", "spontaneous"):
            run = run_simulation(sc, scheme)
            assert [(p.edge, p.size) for p in run.platoons] == [((0, 1), 2), ((1, 2), 2)]
            assert run.report.total_reward == pytest.approx(4 * 2.8, abs=TOL)
            assert run.report.fuel_saving == pytest.approx(0.05, abs=TOL)

    def test_two_cross_fleet_trucks_single_fleet(self):
        sc = scenario(line_truck(0, [0, 1, 2], 30000, 0), line_truck(1, [0, 1, 2], 30000, 1))
        run = run_simulation(sc, "single-fleet")
        assert run.platoons == []
        assert all(d.committed_wait == 0 for d in run.decisions)
        assert run.report.total_reward == 0.0

    def test_waiting_for_a_later_truck(self):
        # Truck 1 starts 6 minutes later; truck 0 waits for it at hub 0.
        sc = scenario(line_truck(0, [0, 1], 30000, 0, slack=480), line_truck(1, [0, 1], 30360, 1))
        run = run_simulation(sc, "predictive")
        assert run.decisions[0].committed_wait == 360
        assert [p.members for p in run.platoons] == [(0, 1)]
        assert run.report.fleet_rewards == pytest.approx({0: 2.8 - 2.5, 1: 2.8})

    def test_spontaneous_cannot_plan_ahead(self):
        # Waiting at hub 0 for truck 1 pays a little on 0->1 but loses truck 2,
        # which leaves hub 1 for two edges exactly when truck 0 would arrive and
        # has no slack to wait.
        sc = scenario(
            line_truck(0, [0, 1, 2, 3], 30000, 0, slack=900),
            line_truck(1, [0, 1], 30300, 1),
            line_truck(2, [1, 2, 3], 33600, 2, slack=0),
        )
        pred = run_simulation(sc, "predictive")
        spont = run_simulation(sc, "spontaneous")
        assert pred.decisions[0].committed_wait == 0
        assert spont.decisions[0].committed_wait == 300
        assert pred.report.total_reward == pytest.approx(4 * 2.8, abs=TOL)
        assert spont.report.total_reward == pytest.approx(2 * 2.8 - 25 * 300 / 3600, abs=TOL)


class TestRewardsAndRates:
    def test_fleet_reward_sharing(self):
        sc = scenario(line_truck(0, [0, 1], 30000, 0), line_truck(1, [0, 1], 30000, 0), line_truck(2, [2, 3], 30000, 1))
        pl = [PlatoonRecord((0, 1), 30000, (0, 1))]
        assert realized_fleet_reward(pl, [], sc) == pytest.approx({0: 5.6, 1: 0.0})
        split = replace(sc, trucks=(line_truck(0, [0, 1], 30000, 0), line_truck(1, [0, 1], 30000, 1)))
        assert realized_fleet_reward(pl, [], split) == pytest.approx({0: 2.8, 1: 2.8})
        assert realized_fleet_reward([], [], sc) == {0: 0.0, 1: 0.0}

    def test_fuel_examples(self):
        trucks = [line_truck(i, [0, 1, 2], 30000, i) for i in range(3)]
        pairs = scenario(*trucks[:2])
        whole_trip = [PlatoonRecord((0, 1), 30000, (0, 1)), PlatoonRecord((1, 2), 33600, (0, 1))]
        assert fuel_saving_fraction(whole_trip, pairs) == pytest.approx(0.05, abs=TOL)
        triple = scenario(*trucks)
        three = [PlatoonRecord((0, 1), 30000, (0, 1, 2)), PlatoonRecord((1, 2), 33600, (0, 1, 2))]
        assert fuel_saving_fraction(three, triple) == pytest.approx(0.1 * 2 / 3, abs=TOL)
        assert fuel_saving_fraction([], triple) == 0.0

    def test_edge_platooning_rate(self):
        sc = scenario(*[line_truck(i, [0, 1], 30000, i) for i in range(3)])
        pl = [PlatoonRecord((0, 1), 30000, (0, 1, 2))]
        assert platooning_rate(pl, sc, (0, 1)) == pytest.approx(2 / 3)
        assert platooning_rate([], sc, (0, 1)) == 0.0
        assert platooning_rate(pl, sc, (2, 3)) is None

    def test_formation_rate(self):
        trucks = [line_truck(i, [2, 3], 30000 + i, i) for i in range(100)]
        trucks[0] = line_truck(0, [0, 1, 2, 3], 30000, 0)
        trucks[1] = line_truck(1, [1, 2, 3], 33600, 1)
        sc = scenario(*trucks)
        # 0 and 1 meet at hub 1 and stay together through hub 2.
        pl = [PlatoonRecord((1, 2), 33600, (0, 1)), PlatoonRecord((2, 3), 37200, (0, 1))]
        assert formation_rate([], pl, sc, 1) == pytest.approx(0.02)
        assert formation_rate([], pl, sc, 2) == 0.0
        assert formation_rate([], [], sc, 1) == 0.0


@pytest.fixture(scope="module")
def mid_runs():
    sc = make_scenario(ScenarioConfig(hub_count=15, truck_count=200, seed=21))
    return sc, {s: run_simulation(sc, s) for s in SchemeKind}


class TestScenarioInvariants:
    def test_conservation(self, mid_runs):
        sc, _ = mid_runs
        assert sum(edge_traversals(sc).values()) == sum(len(t.route.edges) for t in sc.trucks)

    def test_grouping_matches_independent_pass(self, mid_runs):
        sc, runs = mid_runs
        for scheme, run in runs.items():
            deps = rebuild_departures(run, sc)
            expected = independent_grouping(deps, sc, scheme is SchemeKind.SINGLE_FLEET)
            got = sorted((p.edge[0], p.edge[1], p.departure_time, p.members) for p in run.platoons)
            assert got == expected

    def test_schedules_and_deadlines(self, mid_runs):
        sc, runs = mid_runs
        for run in runs.values():
            assert run.report.deadline_violations == 0
            by_truck = defaultdict(list)
            for d in run.decisions:
                by_truck[d.truck].append(d)
            for t in sc.trucks:
                ds = sorted(by_truck[t.id], key=lambda d: d.hub_index)
                assert [d.hub_index for d in ds] == list(range(len(t.route.edges)))
                assert ds[0].time == t.start_time
                clock = t.start_time
                for d, e in zip(ds, t.route.edges):
                    assert d.time == clock
                    assert d.committed_wait >= 0
                    clock += d.committed_wait + e.travel_time
                assert clock <= t.deadline

    def test_report_ranges(self, mid_runs):
        sc, runs = mid_runs
        for run in runs.values():
            r = run.report
            assert 0.0 <= r.system_platooning_rate <= 1.0
            assert all(0.0 <= v <= 1.0 for v in r.edge_platooning_rate.values())
            assert all(0.0 <= v <= 1.0 for v in r.hub_formation_rate.values())
            assert sum(r.size_histogram.values()) == r.n_platoons == len(run.platoons)
            assert all(p.size >= 2 for p in run.platoons)
            assert r.total_reward == pytest.approx(r.platooning_profit - r.waiting_loss, abs=1e-6)
            assert r.co2_reduction == r.fuel_saving

    def test_system_rate_is_weighted_edge_rate(self, mid_runs):
        sc, runs = mid_runs
        total = sum(t.route.travel_time for t in sc.trucks)
        used = edge_traversals(sc)
        for run in runs.values():
            weighted = sum(
                rate * used[e] * sc.network.segment(*e).travel_time / total
                for e, rate in run.report.edge_platooning_rate.items()
            )
            assert weighted == pytest.approx(system_platooning_rate(run.platoons, sc), abs=1e-12)

    def test_single_fleet_platoons_are_same_fleet(self, mid_runs):
        sc, runs = mid_runs
        fleet = {t.id: t.fleet for t in sc.trucks}
        for p in runs[SchemeKind.SINGLE_FLEET].platoons:
            assert len({fleet[m] for m in p.members}) == 1

    def test_determinism(self, mid_runs):
        sc, runs = mid_runs
        again = run_simulation(sc, SchemeKind.PREDICTIVE)
        first = runs[SchemeKind.PREDICTIVE]
        assert again.report == first.report
        assert again.platoons == first.platoons
        assert [d.to_json() for d in again.decisions] == [d.to_json() for d in first.decisions]

    def test_indexed_and_direct_solvers_give_same_run(self):
        sc = make_scenario(ScenarioConfig(hub_count=8, truck_count=40, seed=3))
        a = run_simulation(sc, "predictive", method="indexed")
        b = run_simulation(sc, "predictive", method="direct")
        assert a.report == b.report


class TestCompare:
    def test_one_fleet_predictive_equals_single_fleet(self):
        sc = make_scenario(ScenarioConfig(hub_count=10, truck_count=60, fleet_distribution="one-fleet", seed=8))
        runs = compare_schemes(sc, workers=1)
        a = runs[SchemeKind.PREDICTIVE].report
        b = runs[SchemeKind.SINGLE_FLEET].report
        assert replace(a, scheme="x") == replace(b, scheme="x")

    def test_cross_fleet_pair(self, tmp_path):
        sc = scenario(line_truck(0, [0, 1, 2], 30000, 0), line_truck(1, [0, 1, 2], 30000, 1))
        runs = compare_schemes(sc, workers=1)
        assert runs[SchemeKind.PREDICTIVE].report.total_reward > 0
        assert runs[SchemeKind.SINGLE_FLEET].report.total_reward == 0
        path = write_comparison(runs, tmp_path)
        lines = path.read_text().splitlines()
        assert lines[0] == "scheme,total_reward,fuel_saving,system_platooning_rate,n_platoons,mean_wait_s"
        assert [l.split(",")[0] for l in lines[1:]] == ["predictive", "spontaneous", "single-fleet"]

    def test_parallel_matches_serial(self):
        sc = make_scenario(ScenarioConfig(hub_count=8, truck_count=50, seed=5))
        serial = compare_schemes(sc, workers=1)
        parallel = compare_schemes(sc, workers=3)
        assert comparison_rows(serial) == comparison_rows(parallel)

    def test_repeat_is_byte_identical(self, tmp_path):
        sc = make_scenario(ScenarioConfig(hub_count=8, truck_count=50, seed=6))
        a = write_comparison(compare_schemes(sc, workers=1), tmp_path / "a").read_bytes()
        b = write_comparison(compare_schemes(sc, workers=1), tmp_path / "b").read_bytes()
        assert a == b


def test_write_outputs(tmp_path, mid_runs):
    _, runs = mid_runs
    run = runs[SchemeKind.PREDICTIVE]
    write_outputs(run, tmp_path)
    assert (tmp_path / "metrics.json").exists()
    rows = (tmp_path / "platoons.csv").read_text().splitlines()
    assert rows[0] == "edge_from,edge_to,depart_s,size,members"
    assert len(rows) == len(run.platoons) + 1
    assert len((tmp_path / "decisions.jsonl").read_text().splitlines()) == len(run.decisions)
    sizes = Counter(int(r.split(",")[3]) for r in rows[1:])
    assert dict(sizes) == run.report.size_histogram

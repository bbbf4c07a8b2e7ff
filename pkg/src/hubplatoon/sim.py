"""Discrete-event simulation of a scenario under one coordination scheme.

Platoons are read off the realized schedules afterwards: trucks that leave
the same hub in the same second onto the same directed segment form one
platoon on that segment.  Under single-fleet coordination only trucks of the
same fleet may share a platoon.
"""

from __future__ import annotations

import csv
import heapq
import json
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Iterable, NamedTuple, Sequence

from .coordination import DecisionEvent, HubBoard, Observer, SchemeKind, board_initialize, on_arrival
from .errors import InternalConsistencyError
from .network import Scenario
from .reward import SECONDS_PER_HOUR, average_platoon_profit

ARRIVE, DEPART = 0, 1


class EventQueue:
    """Min-queue of ``(time, truck, kind, hub_index)`` events."""

    def __init__(self):
        self._heap: list[tuple[int, int, int, int]] = []
        self._last = None

    def push(self, time: int, truck: int, kind: int, hub_index: int) -> None:
        heapq.heappush(self._heap, (time, truck, kind, hub_index))

    def pop(self) -> tuple[int, int, int, int]:
        item = heapq.heappop(self._heap)
        if self._last is not None and item[0] < self._last:
            raise InternalConsistencyError("event scheduled in the past")
        self._last = item[0]
        return item

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class PlatoonRecord:
    edge: tuple[int, int]
    departure_time: int
    members: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class MetricsReport:
    scheme: str
    n_trucks: int
    fleet_rewards: dict[int, float]
    total_reward: float
    platooning_profit: float
    waiting_loss: float
    fuel_saving: float
    system_platooning_rate: float
    edge_platooning_rate: dict[tuple[int, int], float]
    hub_formation_rate: dict[int, float]
    hub_mean_wait: dict[int, float]
    size_histogram: dict[int, int]
    n_platoons: int
    mean_wait_s: float
    deadline_violations: int
    solver_seconds: list[float] = field(default_factory=list, compare=False, repr=False)

    @property
    def co2_reduction(self) -> float:
        # Linear fuel-to-CO2 conversion: same relative reduction.
        return self.fuel_saving

    def to_dict(self, timings: bool = True) -> dict:
        out = {
            "scheme": self.scheme,
            "n_trucks": self.n_trucks,
            "total_reward": self.total_reward,
            "platooning_profit": self.platooning_profit,
            "waiting_loss": self.waiting_loss,
            "fuel_saving": self.fuel_saving,
            "co2_reduction": self.co2_reduction,
            "system_platooning_rate": self.system_platooning_rate,
            "n_platoons": self.n_platoons,
            "mean_wait_s": self.mean_wait_s,
            "deadline_violations": self.deadline_violations,
            "size_histogram": {str(k): v for k, v in sorted(self.size_histogram.items())},
            "fleet_rewards": {str(k): v for k, v in sorted(self.fleet_rewards.items())},
            "edge_platooning_rate": {f"{a}-{b}": v for (a, b), v in sorted(self.edge_platooning_rate.items())},
            "hub_formation_rate": {str(k): v for k, v in sorted(self.hub_formation_rate.items())},
            "hub_mean_wait_s": {str(k): v for k, v in sorted(self.hub_mean_wait.items())},
        }
        if timings:
            times = sorted(self.solver_seconds)
            out["solver_seconds"] = {
                "count": len(times),
                "mean": mean(times) if times else 0.0,
                "max": times[-1] if times else 0.0,
                "p98": times[int(0.98 * (len(times) - 1))] if times else 0.0,
            }
        return out


class SimulationRun(NamedTuple):
    report: MetricsReport
    platoons: list[PlatoonRecord]
    decisions: list[DecisionEvent]


def group_platoons(
    departures: dict[int, Sequence[int]], scenario: Scenario, same_fleet_only: bool = False
) -> list[PlatoonRecord]:
    """Platoons formed by identical (edge, departure second) among realized departures."""
    groups: dict[tuple, list[int]] = defaultdict(list)
    for truck in scenario.trucks:
        for edge, dep in zip(truck.route.edges, departures[truck.id]):
            key = (edge.key, dep, truck.fleet if same_fleet_only else None)
            groups[key].append(truck.id)
    records = [
        PlatoonRecord(edge, dep, tuple(sorted(members)))
        for (edge, dep, _), members in groups.items()
        if len(members) >= 2
    ]
    records.sort(key=lambda p: (p.departure_time, p.edge, p.members))
    return records


def _truck_index(scenario: Scenario) -> dict:
    return {t.id: t for t in scenario.trucks}


def realized_fleet_reward(
    platoons: Iterable[PlatoonRecord], decisions: Iterable[DecisionEvent], scenario: Scenario
) -> dict[int, float]:
    """Per-fleet platooning profit (even sharing inside each platoon) minus waiting losses."""
    trucks = _truck_index(scenario)
    rewards = {f: 0.0 for f in scenario.fleets}
    for p in platoons:
        tau = scenario.network.segment(*p.edge).travel_time
        share = average_platoon_profit(p.size, tau, scenario.economics)
        for member in p.members:
            rewards[trucks[member].fleet] += share
    for d in decisions:
        truck = trucks[d.truck]
        rewards[truck.fleet] -= truck.waiting_loss_rate * d.committed_wait / SECONDS_PER_HOUR
    return rewards


def _follower_seconds(platoons: Iterable[PlatoonRecord], scenario: Scenario) -> int:
    return sum((p.size - 1) * scenario.network.segment(*p.edge).travel_time for p in platoons)


def _travel_seconds(scenario: Scenario) -> int:
    return sum(t.route.travel_time for t in scenario.trucks)


def system_platooning_rate(platoons: Iterable[PlatoonRecord], scenario: Scenario) -> float:
    """Share of all truck travel time spent driving as a follower."""
    total = _travel_seconds(scenario)
    return _follower_seconds(platoons, scenario) / total if total else 0.0


def fuel_saving_fraction(platoons: Iterable[PlatoonRecord], scenario: Scenario) -> float:
    return scenario.economics.fuel_saving_fraction * system_platooning_rate(platoons, scenario)


def edge_traversals(scenario: Scenario) -> Counter:
    return Counter(e.key for t in scenario.trucks for e in t.route.edges)


def edge_platooning_rates(platoons: Iterable[PlatoonRecord], scenario: Scenario) -> dict[tuple[int, int], float]:
    """Followers over traversals for every edge that at least one truck uses."""
    used = edge_traversals(scenario)
    followers: Counter = Counter()
    for p in platoons:
        followers[p.edge] += p.size - 1
    return {edge: followers[edge] / n for edge, n in sorted(used.items())}


def platooning_rate(platoons: Iterable[PlatoonRecord], scenario: Scenario, edge: tuple[int, int]) -> "float | None":
    """Platooning rate of one edge, or None when no truck travels it."""
    return edge_platooning_rates(platoons, scenario).get(tuple(edge))


def formation_rates(platoons: Iterable[PlatoonRecord], scenario: Scenario) -> dict[int, float]:
    """Per hub: share of all trucks that leave it with at least one partner they did not arrive with."""
    membership: dict[tuple[int, tuple[int, int]], frozenset] = {}
    for p in platoons:
        group = frozenset(p.members)
        for m in p.members:
            membership[(m, p.edge)] = group
    counts: Counter = Counter()
    for truck in scenario.trucks:
        before: frozenset = frozenset()
        for edge in truck.route.edges:
            now = membership.get((truck.id, edge.key), frozenset())
            if now and not (now - {truck.id}) <= before:
                counts[edge.source] += 1
            before = now
    n = len(scenario.trucks)
    return {h.id: (counts[h.id] / n if n else 0.0) for h in scenario.network.hubs}


def formation_rate(
    decisions: Iterable[DecisionEvent], platoons: Iterable[PlatoonRecord], scenario: Scenario, hub: int
) -> float:
    return formation_rates(platoons, scenario)[hub]


def build_report(
    scheme: SchemeKind,
    scenario: Scenario,
    platoons: list[PlatoonRecord],
    decisions: list[DecisionEvent],
    final_arrivals: dict[int, int],
) -> MetricsReport:
    trucks = _truck_index(scenario)
    fleet_rewards = realized_fleet_reward(platoons, decisions, scenario)
    profit = 0.0
    for p in platoons:
        tau = scenario.network.segment(*p.edge).travel_time
        profit += p.size * average_platoon_profit(p.size, tau, scenario.economics)
    loss = sum(trucks[d.truck].waiting_loss_rate * d.committed_wait / SECONDS_PER_HOUR for d in decisions)
    waits_at: dict[int, list[int]] = defaultdict(list)
    for d in decisions:
        waits_at[d.hub].append(d.committed_wait)
    n = len(scenario.trucks)
    return MetricsReport(
        scheme=scheme.value,
        n_trucks=n,
        fleet_rewards=fleet_rewards,
        total_reward=sum(fleet_rewards.values()),
        platooning_profit=profit,
        waiting_loss=loss,
        fuel_saving=fuel_saving_fraction(platoons, scenario),
        system_platooning_rate=system_platooning_rate(platoons, scenario),
        edge_platooning_rate=edge_platooning_rates(platoons, scenario),
        hub_formation_rate=formation_rates(platoons, scenario),
        hub_mean_wait={h: sum(w) / len(w) for h, w in sorted(waits_at.items())},
        size_histogram=dict(sorted(Counter(p.size for p in platoons).items())),
        n_platoons=len(platoons),
        mean_wait_s=sum(d.committed_wait for d in decisions) / n if n else 0.0,
        deadline_violations=sum(1 for t in scenario.trucks if final_arrivals[t.id] > t.deadline),
        solver_seconds=[d.solve_seconds for d in decisions],
    )


def run_simulation(
    scenario: Scenario,
    scheme: "SchemeKind | str",
    observer: "Observer | None" = None,
    method: str = "indexed",
) -> SimulationRun:
    """Drive every truck through its route, deciding a wait at each hub it leaves."""
    scheme = SchemeKind.parse(scheme)
    trucks = _truck_index(scenario)
    board = HubBoard(scenario.economics)
    for tid in sorted(trucks):
        board_initialize(board, trucks[tid])

    queue = EventQueue()
    for tid in sorted(trucks):
        queue.push(trucks[tid].start_time, tid, ARRIVE, 0)

    departures: dict[int, list[int]] = {tid: [] for tid in trucks}
    final: dict[int, int] = {}
    decisions: list[DecisionEvent] = []
    while queue:
        now, tid, kind, k = queue.pop()
        truck = trucks[tid]
        edges = truck.route.edges
        if kind == ARRIVE:
            if board.arrivals(tid)[k] != now:
                raise InternalConsistencyError(f"truck {tid} reached hub {k} off schedule")
            if k == len(edges):
                board.set_position(tid, ("done", k))
                final[tid] = now
                continue
            event = on_arrival(board, truck, k, now, scheme, observer, method)
            decisions.append(event)
            queue.push(now + event.committed_wait, tid, DEPART, k)
        else:
            board.set_position(tid, ("edge", k))
            departures[tid].append(now)
            queue.push(now + edges[k].travel_time, tid, ARRIVE, k + 1)

    platoons = group_platoons(departures, scenario, same_fleet_only=scheme is SchemeKind.SINGLE_FLEET)
    report = build_report(scheme, scenario, platoons, decisions, final)
    return SimulationRun(report, platoons, decisions)


def write_outputs(run: SimulationRun, out_dir: "str | Path", timings: bool = True) -> None:
    """metrics.json, platoons.csv and decisions.jsonl into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(run.report.to_dict(timings), indent=1) + "\n")
    with open(out / "platoons.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["edge_from", "edge_to", "depart_s", "size", "members"])
        for p in run.platoons:
            writer.writerow([p.edge[0], p.edge[1], p.departure_time, p.size, " ".join(map(str, p.members))])
    with open(out / "decisions.jsonl", "w") as fh:
        for d in run.decisions:
            fh.write(d.to_json() + "\n")


SCHEME_ORDER = (SchemeKind.PREDICTIVE, SchemeKind.SPONTANEOUS, SchemeKind.SINGLE_FLEET)
COMPARE_COLUMNS = ["scheme", "total_reward", "fuel_saving", "system_platooning_rate", "n_platoons", "mean_wait_s"]


def _run_one(args):
    scenario, scheme = args
    return run_simulation(scenario, scheme)


def compare_schemes(scenario: Scenario, workers: "int | None" = None) -> dict[SchemeKind, SimulationRun]:
    """Run all three schemes on ``scenario``; ``workers`` > 1 runs them in separate processes."""
    if workers is None:
        workers = int(os.environ.get("PLATOON_THREADS", "1") or 1)
    workers = max(1, min(workers, len(SCHEME_ORDER)))
    jobs = [(scenario, s) for s in SCHEME_ORDER]
    if workers == 1:
        runs = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_one, jobs))
    return dict(zip(SCHEME_ORDER, runs))


def comparison_rows(runs: dict[SchemeKind, SimulationRun]) -> list[dict]:
    rows = []
    for scheme in SCHEME_ORDER:
        r = runs[scheme].report
        rows.append(
            {
                "scheme": scheme.value,
                "total_reward": round(r.total_reward, 9),
                "fuel_saving": round(r.fuel_saving, 12),
                "system_platooning_rate": round(r.system_platooning_rate, 12),
                "n_platoons": r.n_platoons,
                "mean_wait_s": round(r.mean_wait_s, 9),
            }
        )
    return rows


def comparison_summary(runs: dict[SchemeKind, SimulationRun]) -> dict:
    def ratio(a, b):
        return a / b if b else None

    rewards = {s.value: runs[s].report.total_reward for s in SCHEME_ORDER}
    return {
        "total_reward": rewards,
        "reward_ratio_predictive_over_single_fleet": ratio(rewards["predictive"], rewards["single-fleet"]),
        "reward_ratio_predictive_over_spontaneous": ratio(rewards["predictive"], rewards["spontaneous"]),
        "reward_ratio_spontaneous_over_single_fleet": ratio(rewards["spontaneous"], rewards["single-fleet"]),
        "fuel_saving": {s.value: runs[s].report.fuel_saving for s in SCHEME_ORDER},
    }


def write_comparison(runs: dict[SchemeKind, SimulationRun], out_dir: "str | Path") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "compare.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(comparison_rows(runs))
    (out / "compare_summary.json").write_text(json.dumps(comparison_summary(runs), indent=1) + "\n")
    return path

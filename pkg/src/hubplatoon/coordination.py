"""Shared hub board and the per-arrival decision workflow.

Every truck uploads its route, fleet and a zero-wait schedule before it
starts.  Whenever it reaches a hub it reads its partners' predicted
departures from the board, solves its own waiting problem, applies the wait
at the current hub and uploads the rest of its schedule as predictions.

Board mutations are serialized by the caller: the simulator processes
arrivals in ascending ``(time, truck id)`` order and each decision is an
atomic read-solve-write step.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dp import DpInstance, SolveResult, Stage, solve
from .errors import InternalConsistencyError, InvalidArgumentError, InvalidStateError
from .network import Truck
from .reward import EconomicParams


class SchemeKind(enum.Enum):
    PREDICTIVE = "predictive"
    SPONTANEOUS = "spontaneous"
    SINGLE_FLEET = "single-fleet"

    @classmethod
    def parse(cls, text: "str | SchemeKind") -> "SchemeKind":
        if isinstance(text, cls):
            return text
        for kind in cls:
            if kind.value == text:
                return kind
        names = ", ".join(k.value for k in cls)
        raise InvalidArgumentError(f"unknown scheme {text!r}; expected one of: {names}")


@dataclass
class DecisionEvent:
    truck: int
    hub_index: int
    hub: int
    time: int
    committed_wait: int
    predicted_remaining_waits: tuple[int, ...]
    partners_matched: tuple[int, ...]
    value: float
    solve_seconds: float = field(default=0.0, compare=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.time,
                "truck": self.truck,
                "hub": self.hub,
                "wait_s": self.committed_wait,
                "partners_matched": list(self.partners_matched),
            }
        )


class HubBoard:
    """The shared store of routes, fleet tags and predicted schedules.

    Schedules live in flat integer arrays so that the partners of an edge can
    be gathered with one fancy-indexing step.
    """

    def __init__(self, econ: "EconomicParams | None" = None):
        self.econ = econ or EconomicParams()
        self._trucks: dict[int, Truck] = {}
        self._slot: dict[int, int] = {}
        self._dep_off: list[int] = []
        self._arr_off: list[int] = []
        self._dep: "list[int] | np.ndarray" = []
        self._arr: "list[int] | np.ndarray" = []
        self._decided: "list[int] | np.ndarray" = []
        self._position: dict[int, tuple[str, int]] = {}
        self._members: dict[tuple[int, int], list[tuple[int, int]]] = {}
        self._edge_index: Optional[dict] = None

    def __contains__(self, truck_id: int) -> bool:
        return truck_id in self._trucks

    def __len__(self) -> int:
        return len(self._trucks)

    def _thaw(self):
        if self._edge_index is not None:
            self._dep = self._dep.tolist()
            self._arr = self._arr.tolist()
            self._decided = self._decided.tolist()
            self._edge_index = None

    def _freeze(self) -> dict:
        if self._edge_index is None:
            self._dep = np.asarray(self._dep, dtype=np.int64)
            self._arr = np.asarray(self._arr, dtype=np.int64)
            self._decided = np.asarray(self._decided, dtype=np.int64)
            by_slot = list(self._trucks.values())
            dep_off = np.asarray(self._dep_off, dtype=np.int64)
            index = {}
            for key, members in self._members.items():
                slots = np.array([s for s, _ in members], dtype=np.int64)
                pos = np.array([p for _, p in members], dtype=np.int64)
                index[key] = (
                    np.array([by_slot[s].id for s in slots.tolist()], dtype=np.int64),
                    np.array([by_slot[s].fleet for s in slots.tolist()], dtype=np.int64),
                    slots,
                    pos,
                    dep_off[slots] + pos,
                )
            self._edge_index = index
        return self._edge_index

    def register(self, truck: Truck) -> None:
        """Upload a truck's route and fleet with a zero-wait schedule from its start time."""
        if truck.id in self._trucks:
            raise InvalidStateError(f"truck {truck.id} is already registered")
        self._thaw()
        slot = len(self._trucks)
        self._trucks[truck.id] = truck
        self._slot[truck.id] = slot
        self._dep_off.append(len(self._dep))
        self._arr_off.append(len(self._arr))
        t = truck.start_time
        self._arr.append(t)
        for pos, edge in enumerate(truck.route.edges):
            self._dep.append(t)
            t += edge.travel_time
            self._arr.append(t)
            self._members.setdefault(edge.key, []).append((slot, pos))
        self._decided.append(-1)
        self._position[truck.id] = ("pending", 0)

    def truck(self, truck_id: int) -> Truck:
        try:
            return self._trucks[truck_id]
        except KeyError:
            raise InvalidStateError(f"truck {truck_id} is not registered") from None

    def departures(self, truck_id: int) -> list[int]:
        slot = self._slot[self.truck(truck_id).id]
        off = self._dep_off[slot]
        return [int(x) for x in self._dep[off : off + len(self._trucks[truck_id].route.edges)]]

    def arrivals(self, truck_id: int) -> list[int]:
        slot = self._slot[self.truck(truck_id).id]
        off = self._arr_off[slot]
        return [int(x) for x in self._arr[off : off + len(self._trucks[truck_id].route.edges) + 1]]

    def decided_upto(self, truck_id: int) -> int:
        return int(self._decided[self._slot[self.truck(truck_id).id]])

    def position(self, truck_id: int) -> tuple[str, int]:
        self.truck(truck_id)
        return self._position[truck_id]

    def set_position(self, truck_id: int, position: tuple[str, int]) -> None:
        self.truck(truck_id)
        if position[0] not in ("pending", "hub", "edge", "done"):
            raise InvalidArgumentError(f"unknown position kind {position[0]!r}")
        self._position[truck_id] = position

    def edge_view(self, edge: tuple[int, int]):
        """Trucks using ``edge``: ids, fleets, decided hub index, route position, predicted departure."""
        index = self._freeze()
        if edge not in index:
            return _EMPTY_VIEW
        ids, fleets, slots, pos, dep_idx = index[edge]
        return ids, fleets, self._decided[slots], pos, self._dep[dep_idx]

    def commit(self, truck_id: int, hub_index: int, result: SolveResult) -> None:
        """Apply the wait at ``hub_index`` and upload the remaining schedule as predictions."""
        truck = self.truck(truck_id)
        n_edges = len(truck.route.edges)
        if len(result.waits) != n_edges - hub_index:
            raise InternalConsistencyError("solve result does not cover the remaining route")
        self._freeze()
        slot = self._slot[truck_id]
        d0 = self._dep_off[slot] + hub_index
        a0 = self._arr_off[slot] + hub_index
        for m, (a, w) in enumerate(zip(result.arrivals, result.waits)):
            self._dep[d0 + m] = a + w
            self._arr[a0 + m + 1] = result.arrivals[m + 1]
        self._decided[slot] = hub_index

    def check_consistency(self, truck_id: int) -> None:
        truck = self.truck(truck_id)
        dep, arr = self.departures(truck_id), self.arrivals(truck_id)
        for k, edge in enumerate(truck.route.edges):
            if dep[k] < arr[k]:
                raise InternalConsistencyError(f"truck {truck_id} departs hub {k} before arriving")
            if dep[k] + edge.travel_time != arr[k + 1]:
                raise InternalConsistencyError(f"truck {truck_id}: schedule breaks at hub {k}")

    def snapshot(self) -> dict:
        out = []
        for tid in sorted(self._trucks):
            truck = self._trucks[tid]
            kind, idx = self._position[tid]
            out.append(
                {
                    "id": tid,
                    "fleet": truck.fleet,
                    "route": list(truck.route.hubs),
                    "departures_s": self.departures(tid),
                    "arrivals_s": self.arrivals(tid),
                    "position": {"kind": kind, "index": idx},
                }
            )
        return {"trucks": out}

    def dumps(self) -> str:
        return json.dumps(self.snapshot(), indent=1) + "\n"


_EMPTY_VIEW = tuple(np.zeros(0, dtype=np.int64) for _ in range(5))


def board_initialize(board: HubBoard, truck: Truck) -> HubBoard:
    board.register(truck)
    return board


def build_instance(board: HubBoard, truck: Truck, k: int, arrival: int, scheme: SchemeKind) -> DpInstance:
    """The decision problem of ``truck`` at its hub ``k``, as visible under ``scheme``.

    predictive: every truck sharing a remaining edge, with its board-predicted departure.
    spontaneous: only trucks that pass through hub ``k`` onto the same next edge and
        are still there or yet to come; nothing about later hubs.
    single-fleet: as predictive, restricted to the truck's own fleet.
    """
    scheme = SchemeKind.parse(scheme)
    if board.position(truck.id) != ("hub", k):
        raise InvalidStateError(f"truck {truck.id} is not at its hub {k}")
    if board.arrivals(truck.id)[k] != arrival:
        raise InvalidStateError(
            f"truck {truck.id} arrival {arrival} disagrees with its schedule {board.arrivals(truck.id)[k]}"
        )
    stages = []
    for m in range(k, len(truck.route.edges)):
        edge = truck.route.edges[m]
        if scheme is SchemeKind.SPONTANEOUS and m > k:
            stages.append(Stage(edge.travel_time))
            continue
        ids, fleets, decided, pos, deps = board.edge_view(edge.key)
        mask = ids != truck.id
        if scheme is SchemeKind.SINGLE_FLEET:
            mask &= fleets == truck.fleet
        elif scheme is SchemeKind.SPONTANEOUS:
            # Trucks meeting at this hub; anyone already gone is irrelevant.
            mask &= deps >= arrival
        stages.append(Stage(edge.travel_time, ids[mask], fleets[mask], deps[mask]))
    return DpInstance(tuple(stages), arrival, truck.deadline, truck.fleet, board.econ, truck.waiting_loss_rate)


Observer = Callable[[DpInstance, SolveResult], None]


def on_arrival(
    board: HubBoard,
    truck: Truck,
    k: int,
    arrival: int,
    scheme: SchemeKind,
    observer: "Observer | None" = None,
    method: str = "indexed",
) -> DecisionEvent:
    """Read the board, solve, commit the wait at hub ``k`` and publish the new schedule."""
    if not 0 <= k < len(truck.route.edges):
        raise InvalidArgumentError(f"hub index {k} has no outgoing edge on truck {truck.id}'s route")
    board.set_position(truck.id, ("hub", k))
    started = time.perf_counter()
    instance = build_instance(board, truck, k, arrival, scheme)
    result = solve(instance, method=method)
    elapsed = time.perf_counter() - started
    wait = result.waits[0]
    first = instance.stages[0]
    matched = tuple(sorted(first.trucks[first.departures == arrival + wait].tolist()))
    board.commit(truck.id, k, result)
    if observer is not None:
        observer(instance, result)
    return DecisionEvent(
        truck=truck.id,
        hub_index=k,
        hub=truck.route.hubs[k],
        time=arrival,
        committed_wait=wait,
        predicted_remaining_waits=result.waits[1:],
        partners_matched=matched,
        value=result.value,
        solve_seconds=elapsed,
    )

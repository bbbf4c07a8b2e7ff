"""Exact finite-horizon solver for one truck's waiting-time problem.

A truck at hub ``k`` chooses a wait at every remaining hub.  Only waits that
align its departure with some partner's predicted departure (plus the zero
wait) can be optimal, so the decision space at each state is finite, and the
reachable arrival times form a finite state space generated forward from the
current arrival.  A backward Bellman pass over that grid gives the optimal
value and a forward pass extracts the waits.

Two implementations of the pass are provided and must agree bit for bit:

``method="direct"``
    Loops over every (state, wait) pair and recomputes the matched partner
    set for each one.  Slow, used as the reference.
``method="indexed"``
    Pre-computes the stage reward per distinct partner departure time and
    evaluates all waits of a state as one array slice.

``brute_force_solve`` enumerates every wait combination along every induced
trajectory and is the independent oracle for both.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InfeasibleError, InternalConsistencyError, InvalidArgumentError, ResourceLimitError
from .reward import (
    EconomicParams,
    PartnerCounts,
    PartnerPrediction,
    count_partners,
    predicted_partners,
    stage_reward,
    terminal_reward,
)

# Q-values closer than this are treated as a tie and resolved toward the smaller wait.
TIE_TOLERANCE = 1e-9
DEFAULT_GUARD = 10**8

_EMPTY = np.zeros(0, dtype=np.int64)


class Stage:
    """One remaining road segment: its travel time and the partners that share it."""

    __slots__ = ("travel_time", "trucks", "fleets", "departures")

    def __init__(self, travel_time: int, trucks=_EMPTY, fleets=_EMPTY, departures=_EMPTY):
        self.travel_time = int(travel_time)
        self.trucks = np.asarray(trucks, dtype=np.int64)
        self.fleets = np.asarray(fleets, dtype=np.int64)
        self.departures = np.asarray(departures, dtype=np.int64)
        if self.travel_time <= 0:
            raise InvalidArgumentError("stage travel time must be positive")
        if not (len(self.trucks) == len(self.fleets) == len(self.departures)):
            raise InvalidArgumentError("partner arrays must have equal length")

    @classmethod
    def from_partners(cls, travel_time: int, partners: Iterable[PartnerPrediction]) -> "Stage":
        partners = list(partners)
        return cls(
            travel_time,
            [p.truck for p in partners],
            [p.fleet for p in partners],
            [p.predicted_departure for p in partners],
        )

    @property
    def partners(self) -> tuple[PartnerPrediction, ...]:
        return tuple(
            PartnerPrediction(t, f, d)
            for t, f, d in zip(self.trucks.tolist(), self.fleets.tolist(), self.departures.tolist())
        )

    def to_dict(self) -> dict:
        return {
            "tau_s": self.travel_time,
            "partners": [
                {"truck": p.truck, "fleet": p.fleet, "departure_s": p.predicted_departure}
                for p in self.partners
            ],
        }

    def __eq__(self, other):
        if not isinstance(other, Stage):
            return NotImplemented
        return self.travel_time == other.travel_time and self.partners == other.partners

    def __repr__(self):
        return f"Stage(travel_time={self.travel_time}, partners={len(self.trucks)})"


@dataclass(frozen=True, eq=False)
class DpInstance:
    stages: tuple[Stage, ...]
    arrival: int
    deadline: int
    own_fleet: int
    econ: EconomicParams = field(default_factory=EconomicParams)
    waiting_loss_rate: float = 25.0

    def __post_init__(self):
        if not self.stages:
            raise InvalidArgumentError("an instance needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))
        remaining = [0] * (len(self.stages) + 1)
        for m in range(len(self.stages) - 1, -1, -1):
            remaining[m] = remaining[m + 1] + self.stages[m].travel_time
        object.__setattr__(self, "_remaining", tuple(remaining))
        if self.arrival + remaining[0] > self.deadline:
            raise InfeasibleError(
                f"arrival {self.arrival} + travel {remaining[0]} exceeds deadline {self.deadline}"
            )

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def remaining_travel(self, stage: int) -> int:
        """Travel time from hub ``stage`` to the destination."""
        return self._remaining[stage]

    def latest_departure(self, stage: int) -> int:
        """Latest departure from hub ``stage`` that still meets the deadline with no further waits."""
        return self.deadline - self._remaining[stage]

    def terminal(self, arrival_at_destination: int) -> float:
        return terminal_reward(
            arrival_at_destination, self.arrival, self._remaining[0], self.waiting_loss_rate
        )

    def stage_reward_at(self, stage: int, state: int, wait: int) -> tuple[float, set[int]]:
        """Stage reward of departing at ``state + wait`` and the predicted partner set it matches."""
        st = self.stages[stage]
        partners = st.partners
        matched = predicted_partners(state, wait, partners)
        counts = count_partners((p for p in partners if p.truck in matched), self.own_fleet)
        return stage_reward(st.travel_time, counts, not matched, self.econ), matched

    def to_dict(self) -> dict:
        return {
            "arrival_s": self.arrival,
            "deadline_s": self.deadline,
            "own_fleet": self.own_fleet,
            "epsilon_per_h": self.waiting_loss_rate,
            "economics": self.econ.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DpInstance":
        econ = EconomicParams.from_dict(data.get("economics", {}))
        stages = tuple(
            Stage.from_partners(
                int(s["tau_s"]),
                (PartnerPrediction(int(p["truck"]), int(p["fleet"]), int(p["departure_s"])) for p in s["partners"]),
            )
            for s in data["stages"]
        )
        return cls(
            stages,
            int(data["arrival_s"]),
            int(data["deadline_s"]),
            int(data["own_fleet"]),
            econ,
            float(data.get("epsilon_per_h", econ.default_waiting_loss_rate)),
        )

    def __eq__(self, other):
        if not isinstance(other, DpInstance):
            return NotImplemented
        return self.to_dict() == other.to_dict()


StateSpace = tuple[tuple[int, ...], ...]


@dataclass
class ValueTable:
    """Optimal values per stage and state, plus the chosen wait for non-terminal stages."""

    values: list[dict[int, float]]
    policy: list[dict[int, int]]

    def value(self, stage: int, state: int) -> float:
        return self.values[stage][state]

    def best_wait(self, stage: int, state: int) -> int:
        return self.policy[stage][state]


@dataclass
class SolveStats:
    q_evaluations: int
    state_counts: tuple[int, ...]
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class SolveResult:
    waits: tuple[int, ...]
    arrivals: tuple[int, ...]
    value: float
    stats: SolveStats
    instance: DpInstance = field(repr=False, compare=False)
    states: "StateSpace | None" = field(default=None, repr=False, compare=False)
    table: "ValueTable | None" = field(default=None, repr=False, compare=False)

    @property
    def departures(self) -> tuple[int, ...]:
        return tuple(a + w for a, w in zip(self.arrivals, self.waits))


def decision_space(instance: DpInstance, stage: int, state: int) -> list[int]:
    """Zero plus every feasible wait that aligns departure with a partner's predicted departure."""
    bound = instance.latest_departure(stage) - state
    waits = {0}
    for d in instance.stages[stage].departures.tolist():
        w = d - state
        if 0 <= w <= bound:
            waits.add(w)
    return sorted(waits)


def generate_state_space(instance: DpInstance) -> StateSpace:
    """Reachable arrival times per hub, generated forward from the current arrival."""
    states: list[tuple[int, ...]] = [(instance.arrival,)]
    for m, st in enumerate(instance.stages):
        nxt = set()
        for t in states[-1]:
            for w in decision_space(instance, m, t):
                nxt.add(t + w + st.travel_time)
        states.append(tuple(sorted(nxt)))
    return tuple(states)


def q_value(
    instance: DpInstance, stage: int, state: int, wait: int, next_values: Mapping[int, float]
) -> float:
    """Stage reward of ``wait`` plus the optimal value of the state it leads to."""
    nxt = state + wait + instance.stages[stage].travel_time
    try:
        future = next_values[nxt]
    except KeyError:
        raise InternalConsistencyError(
            f"stage {stage + 1} has no value for state {nxt}; state space is incomplete"
        ) from None
    g, _ = instance.stage_reward_at(stage, state, wait)
    return g + future


def _pick(qs: Sequence[float]) -> int:
    best = max(qs)
    for i, q in enumerate(qs):
        if q >= best - TIE_TOLERANCE:
            return i
    raise InternalConsistencyError("no Q-value reached the maximum")


def _extract(instance: DpInstance, table: ValueTable) -> tuple[tuple[int, ...], tuple[int, ...]]:
    t = instance.arrival
    waits, arrivals = [], [t]
    for m, st in enumerate(instance.stages):
        w = table.best_wait(m, t)
        waits.append(w)
        t = t + w + st.travel_time
        arrivals.append(t)
    return tuple(waits), tuple(arrivals)


def _solve_direct(instance: DpInstance) -> tuple[StateSpace, ValueTable, int]:
    states = generate_state_space(instance)
    n = instance.n_stages
    values: list[dict[int, float]] = [dict() for _ in range(n + 1)]
    policy: list[dict[int, int]] = [dict() for _ in range(n)]
    values[n] = {t: instance.terminal(t) for t in states[n]}
    q_evals = 0
    for m in range(n - 1, -1, -1):
        for t in states[m]:
            waits = decision_space(instance, m, t)
            qs = [q_value(instance, m, t, w, values[m + 1]) for w in waits]
            q_evals += len(qs)
            i = _pick(qs)
            values[m][t] = qs[i]
            policy[m][t] = waits[i]
    return states, ValueTable(values, policy), q_evals


def _departure_rewards(instance: DpInstance, stage: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct partner departures at ``stage`` and the stage reward of departing at each."""
    st = instance.stages[stage]
    if len(st.departures) == 0:
        return _EMPTY, np.zeros(0)
    uniq, inverse = np.unique(st.departures, return_inverse=True)
    total = np.bincount(inverse, minlength=len(uniq))
    same = np.bincount(inverse, weights=(st.fleets == instance.own_fleet), minlength=len(uniq)).astype(np.int64)
    memo: dict[tuple[int, int], float] = {}
    rewards = np.empty(len(uniq))
    for i, (s, n) in enumerate(zip(same.tolist(), total.tolist())):
        key = (s, n - s)
        if key not in memo:
            memo[key] = stage_reward(st.travel_time, PartnerCounts(*key), False, instance.econ)
        rewards[i] = memo[key]
    return uniq, rewards


def _indexed_states(instance: DpInstance, departures: Sequence[np.ndarray]) -> list[np.ndarray]:
    states = [np.array([instance.arrival], dtype=np.int64)]
    for m, st in enumerate(instance.stages):
        cur = states[-1]
        dep = departures[m]
        lo = np.searchsorted(dep, cur[0], side="left")
        hi = np.searchsorted(dep, instance.latest_departure(m), side="right")
        nxt = np.unique(np.concatenate([cur, dep[lo:hi]])) + st.travel_time
        states.append(nxt)
    return states


def _solve_indexed(instance: DpInstance) -> tuple[StateSpace, ValueTable, int]:
    n = instance.n_stages
    deps, rewards = zip(*(_departure_rewards(instance, m) for m in range(n)))
    states = _indexed_states(instance, deps)

    values: list[dict[int, float]] = [dict() for _ in range(n + 1)]
    policy: list[dict[int, int]] = [dict() for _ in range(n)]
    terminal = [instance.terminal(t) for t in states[n].tolist()]
    values[n] = dict(zip(states[n].tolist(), terminal))
    j_next = np.array(terminal)
    q_evals = 0

    for m in range(n - 1, -1, -1):
        cur, nxt = states[m], states[m + 1]
        dep, g = deps[m], rewards[m]
        tau = instance.stages[m].travel_time
        hi = int(np.searchsorted(dep, instance.latest_departure(m), side="right"))
        lo = int(np.searchsorted(dep, cur[0], side="left"))
        # Q of departing at each reachable partner departure time.
        reach = dep[lo:hi]
        q_dep = g[lo:hi] + j_next[np.searchsorted(nxt, reach + tau)]

        first = np.searchsorted(dep, cur, side="left")
        j_stay = j_next[np.searchsorted(nxt, cur + tau)]
        j_here = np.empty(len(cur))
        wait_here = np.zeros(len(cur), dtype=np.int64)
        for i, t in enumerate(cur.tolist()):
            p = int(first[i])
            if p < len(dep) and dep[p] == t:
                q0 = float(g[p]) + float(j_stay[i])
                start = p + 1
            else:
                q0 = 0.0 + float(j_stay[i])
                start = p
            seg = q_dep[start - lo : hi - lo] if start < hi else q_dep[:0]
            q_evals += 1 + len(seg)
            if len(seg) == 0:
                j_here[i] = q0
                continue
            top = float(seg.max())
            best = q0 if q0 >= top else top
            if q0 >= best - TIE_TOLERANCE:
                j_here[i] = q0
            else:
                k = int(np.argmax(seg >= best - TIE_TOLERANCE))
                j_here[i] = seg[k]
                wait_here[i] = int(dep[start + k]) - t
        keys = cur.tolist()
        values[m] = dict(zip(keys, j_here.tolist()))
        policy[m] = dict(zip(keys, wait_here.tolist()))
        j_next = j_here

    space = tuple(tuple(s.tolist()) for s in states)
    return space, ValueTable(values, policy), q_evals


def solve(instance: DpInstance, method: str = "indexed") -> SolveResult:
    """Optimal waits for ``instance``; ties resolve toward the smallest wait."""
    started = time.perf_counter()
    if method == "indexed":
        states, table, q_evals = _solve_indexed(instance)
    elif method == "direct":
        states, table, q_evals = _solve_direct(instance)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    waits, arrivals = _extract(instance, table)
    if arrivals[-1] > instance.deadline:
        raise InternalConsistencyError("optimal schedule misses the deadline")
    stats = SolveStats(q_evals, tuple(len(s) for s in states), time.perf_counter() - started)
    return SolveResult(waits, arrivals, table.value(0, instance.arrival), stats, instance, states, table)


def optimal_value_at(instance: DpInstance, arrival: int) -> float:
    """Optimal value of the first hub's value function at another arrival time.

    Waiting is still measured from ``instance.arrival``, so any delay beyond
    it is charged like a wait and values at different arrivals compare.
    """
    if arrival < instance.arrival:
        raise InvalidArgumentError("arrival must not precede the instance's own arrival")
    delay = arrival - instance.arrival
    return solve(replace(instance, arrival=arrival)).value - instance.waiting_loss_rate * delay / 3600.0


def evaluate_schedule(instance: DpInstance, waits: Sequence[int]) -> float:
    """Objective value of a wait sequence: sum of stage rewards plus the terminal reward."""
    if len(waits) != instance.n_stages:
        raise InvalidArgumentError("need one wait per stage")
    t = instance.arrival
    total = 0.0
    for m, (st, w) in enumerate(zip(instance.stages, waits)):
        if w < 0 or t + w > instance.latest_departure(m):
            raise InfeasibleError(f"wait {w} at stage {m} violates the deadline bound")
        g, _ = instance.stage_reward_at(m, t, w)
        total += g
        t = t + w + st.travel_time
    return total + instance.terminal(t)


def decision_space_sizes(instance: DpInstance, states: "StateSpace | None" = None) -> list[int]:
    """Size of the union of decision spaces over all reachable states, per stage."""
    if states is None:
        deps = [_departure_rewards(instance, m)[0] for m in range(instance.n_stages)]
        states = tuple(tuple(s.tolist()) for s in _indexed_states(instance, deps))
    sizes = []
    for m, st in enumerate(instance.stages):
        dep = np.unique(st.departures)
        cur = np.asarray(states[m], dtype=np.int64)
        bound = instance.latest_departure(m)
        waits = np.zeros(1, dtype=np.int64)
        chunk = 512
        for c in range(0, len(cur), chunk):
            block = cur[c : c + chunk]
            diff = dep[None, :] - block[:, None]
            ok = (diff >= 0) & (dep[None, :] <= bound)
            waits = np.union1d(waits, diff[ok])
        sizes.append(len(waits))
    return sizes


def solve_stats(result: SolveResult) -> dict:
    """Complexity summary of a solve: n_tilde (largest per-stage decision set), states, Q evaluations."""
    sizes = decision_space_sizes(result.instance, result.states)
    return {
        "n_tilde": max(sizes),
        "decision_counts": sizes,
        "state_counts": list(result.stats.state_counts),
        "q_evaluations": result.stats.q_evaluations,
        "hubs": result.instance.n_stages + 1,
        "wall_time": result.stats.wall_time,
    }


def brute_force_solve(instance: DpInstance, guard: int = DEFAULT_GUARD) -> SolveResult:
    """Enumerate every wait combination and evaluate the objective directly.

    Raises ``ResourceLimitError`` when the product of per-stage decision set
    sizes exceeds ``guard``.
    """
    started = time.perf_counter()
    combos = math.prod(decision_space_sizes(instance))
    if combos > guard:
        raise ResourceLimitError(f"{combos} wait combinations exceed the guard of {guard}")

    n = instance.n_stages
    best_value = -math.inf
    best_waits: tuple[int, ...] = ()
    evaluated = 0
    waits = [0] * n
    gains = [0.0] * n

    def walk(m: int, t: int):
        nonlocal best_value, best_waits, evaluated
        if m == n:
            evaluated += 1
            total = sum(gains) + instance.terminal(t)
            if total > best_value + TIE_TOLERANCE:
                best_value, best_waits = total, tuple(waits)
            return
        tau = instance.stages[m].travel_time
        for w in decision_space(instance, m, t):
            gains[m], _ = instance.stage_reward_at(m, t, w)
            waits[m] = w
            walk(m + 1, t + w + tau)

    walk(0, instance.arrival)
    arrivals = [instance.arrival]
    for st, w in zip(instance.stages, best_waits):
        arrivals.append(arrivals[-1] + w + st.travel_time)
    stats = SolveStats(evaluated, (), time.perf_counter() - started)
    return SolveResult(best_waits, tuple(arrivals), best_value, stats, instance)

"""Road network, routing and synthetic scenario generation.

Time is integer seconds since the simulation epoch (midnight), so
08:00 is 28800.  All travel times, waits and deadlines are integers.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidArgumentError, NoRouteError
from .reward import EconomicParams

DEFAULT_SPEED_KMH = 80.0
DEFAULT_SIDE_KM = 500.0
DEFAULT_NEIGHBORS = 3
WINDOW_08_09 = (8 * 3600, 9 * 3600)


@dataclass(frozen=True)
class Hub:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class RoadSegment:
    source: int
    target: int
    travel_time: int

    def __post_init__(self):
        if self.travel_time <= 0:
            raise InvalidArgumentError(f"segment {self.key} needs a positive travel time")
        if self.source == self.target:
            raise InvalidArgumentError("self-loop segments are not allowed")

    @property
    def key(self) -> tuple[int, int]:
        return (self.source, self.target)


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    hubs: tuple[Hub, ...]
    segments: Mapping[tuple[int, int], RoadSegment]
    _adjacency: dict = field(init=False, repr=False)

    def __post_init__(self):
        ids = [h.id for h in self.hubs]
        if ids != list(range(len(ids))):
            raise InvalidArgumentError("hub ids must be dense and ordered 0..n-1")
        adjacency: dict[int, list[RoadSegment]] = {h: [] for h in ids}
        for key, seg in self.segments.items():
            if key != seg.key:
                raise InvalidArgumentError(f"segment stored under {key} but connects {seg.key}")
            if seg.source not in adjacency or seg.target not in adjacency:
                raise InvalidArgumentError(f"segment {key} references an unknown hub")
            adjacency[seg.source].append(seg)
        for out in adjacency.values():
            out.sort(key=lambda s: s.target)
        object.__setattr__(self, "_adjacency", adjacency)

    @property
    def hub_count(self) -> int:
        return len(self.hubs)

    def segment(self, source: int, target: int) -> RoadSegment:
        try:
            return self.segments[(source, target)]
        except KeyError:
            raise InvalidArgumentError(f"no segment {source}->{target}") from None

    def out_segments(self, hub: int) -> list[RoadSegment]:
        return self._adjacency[hub]

    def __eq__(self, other):
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return self.hubs == other.hubs and dict(self.segments) == dict(other.segments)


@dataclass(frozen=True)
class Route:
    edges: tuple[RoadSegment, ...]

    def __post_init__(self):
        if not self.edges:
            raise InvalidArgumentError("a route needs at least one edge")
        for a, b in zip(self.edges, self.edges[1:]):
            if a.target != b.source:
                raise InvalidArgumentError(f"edges {a.key} and {b.key} do not chain")

    @property
    def hubs(self) -> tuple[int, ...]:
        return (self.edges[0].source,) + tuple(e.target for e in self.edges)

    @property
    def travel_time(self) -> int:
        return sum(e.travel_time for e in self.edges)

    @property
    def travel_times(self) -> tuple[int, ...]:
        return tuple(e.travel_time for e in self.edges)


@dataclass(frozen=True)
class Truck:
    id: int
    fleet: int
    route: Route
    start_time: int
    deadline: int
    waiting_loss_rate: float = 25.0

    def __post_init__(self):
        if self.deadline < self.start_time + self.route.travel_time:
            raise InvalidArgumentError(f"truck {self.id}: deadline before the no-wait arrival")
        if self.waiting_loss_rate < 0:
            raise InvalidArgumentError(f"truck {self.id}: negative waiting loss rate")

    @property
    def waiting_budget(self) -> int:
        return self.deadline - self.start_time - self.route.travel_time


@dataclass(frozen=True, eq=False)
class FlowMatrix:
    flow: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=float)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise InvalidArgumentError("flow matrix must be square")
        if (f < 0).any() or not np.isfinite(f).all():
            raise InvalidArgumentError("flow entries must be finite and non-negative")
        if np.any(np.diag(f) != 0):
            raise InvalidArgumentError("flow matrix diagonal must be zero")
        if not (f > 0).any():
            raise InvalidArgumentError("flow matrix has no positive entry")
        object.__setattr__(self, "flow", f)

    def probabilities(self) -> np.ndarray:
        return self.flow / self.flow.sum()


@dataclass(frozen=True)
class FleetDistribution:
    """Fleet sizes as ``(trucks_per_fleet, fleet_count)`` buckets."""

    buckets: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.buckets:
            raise InvalidArgumentError("fleet distribution needs at least one bucket")
        for size, count in self.buckets:
            if size < 1 or count < 1:
                raise InvalidArgumentError(f"invalid bucket ({size}, {count})")

    @property
    def truck_count(self) -> int:
        return sum(size * count for size, count in self.buckets)

    @property
    def fleet_count(self) -> int:
        return sum(count for _, count in self.buckets)

    def fleet_sizes(self) -> list[int]:
        return [size for size, count in self.buckets for _ in range(count)]

    def scaled(self, truck_count: int) -> "FleetDistribution":
        """Proportional buckets for a different number of trucks.

        A bucket is kept when it would hold at least half a fleet at the new
        scale.  Truck shares are renormalized over the kept buckets, each
        bucket gets the nearest whole number of fleets (largest sizes first),
        and size-1 fleets keep their share plus any rounding leftover.
        Reproduces the original buckets at their own truck count.
        """
        if truck_count < 1:
            raise InvalidArgumentError("truck_count must be positive")
        ratio = truck_count / self.truck_count
        kept = [(size, count) for size, count in self.buckets if count * ratio >= 0.5 or size == 1]
        kept_trucks = sum(size * count for size, count in kept)
        singles = sum(count for size, count in kept if size == 1)
        room = truck_count - math.floor(singles * truck_count / kept_trucks + 0.5)
        out: dict[int, int] = {}
        assigned = 0
        for size, count in sorted(kept, key=lambda b: -b[0]):
            if size == 1:
                continue
            share = size * count * truck_count / kept_trucks
            n = min(math.floor(share / size + 0.5), (room - assigned) // size)
            if n > 0:
                out[size] = out.get(size, 0) + n
                assigned += n * size
        if assigned < truck_count:
            out[1] = out.get(1, 0) + truck_count - assigned
        return FleetDistribution(tuple(sorted(out.items())))

    @classmethod
    def parse(cls, text: str) -> "FleetDistribution":
        """Parse ``"1x325,3x362"`` (size x count pairs)."""
        buckets = []
        try:
            for part in text.split(","):
                size, count = part.lower().split("x")
                buckets.append((int(size), int(count)))
        except ValueError:
            raise InvalidArgumentError(f"cannot parse fleet distribution {text!r}") from None
        return cls(tuple(buckets))

    def to_text(self) -> str:
        return ",".join(f"{s}x{c}" for s, c in self.buckets)


# Fleet and truck assignment for 5000 trucks in 855 fleets.
TABLE1 = FleetDistribution(
    ((1, 325), (3, 362), (7, 80), (15, 49), (34, 27), (74, 8), (148, 3), (340, 1))
)


def resolve_fleet_distribution(spec: "str | FleetDistribution", truck_count: int) -> FleetDistribution:
    """Turn a preset name or explicit bucket text into buckets for ``truck_count`` trucks."""
    if isinstance(spec, FleetDistribution):
        return spec
    name = spec.strip().lower()
    if name == "table1":
        return TABLE1.scaled(truck_count)
    if name == "single-vehicle":
        return FleetDistribution(((1, truck_count),))
    if name == "one-fleet":
        return FleetDistribution(((truck_count, 1),))
    return FleetDistribution.parse(spec)


def travel_seconds(distance_km: float, speed_kmh: float) -> int:
    """Travel time rounded half-up to whole seconds (at least one second)."""
    if speed_kmh <= 0:
        raise InvalidArgumentError("speed must be positive")
    return max(1, math.floor(distance_km / speed_kmh * 3600.0 + 0.5))


def network_from_positions(
    positions: Sequence[tuple[float, float]],
    links: "Sequence[tuple[int, int]]",
    speed_kmh: float = DEFAULT_SPEED_KMH,
) -> RoadNetwork:
    """Network with one segment in each direction for every undirected link."""
    hubs = tuple(Hub(i, float(x), float(y)) for i, (x, y) in enumerate(positions))
    segments: dict[tuple[int, int], RoadSegment] = {}
    for a, b in sorted({tuple(sorted(link)) for link in links}):
        ha, hb = hubs[a], hubs[b]
        tt = travel_seconds(math.hypot(ha.x - hb.x, ha.y - hb.y), speed_kmh)
        segments[(a, b)] = RoadSegment(a, b, tt)
        segments[(b, a)] = RoadSegment(b, a, tt)
    return RoadNetwork(hubs, segments)


def _distance_matrix(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def build_synthetic_network(
    hub_count: int,
    seed: int,
    speed_kmh: float = DEFAULT_SPEED_KMH,
    side_km: float = DEFAULT_SIDE_KM,
    neighbors: int = DEFAULT_NEIGHBORS,
) -> RoadNetwork:
    """Seeded random geometric road network.

    Hubs are uniform in a ``side_km`` square and linked to their
    ``neighbors`` nearest hubs.  Disconnected components are bridged through
    their closest hub pair until the graph is connected.
    """
    if hub_count < 2:
        raise InvalidArgumentError("hub_count must be at least 2")
    if speed_kmh <= 0 or side_km <= 0:
        raise InvalidArgumentError("speed_kmh and side_km must be positive")
    rng = np.random.default_rng(seed)
    points = np.round(rng.uniform(0.0, side_km, size=(hub_count, 2)), 3)
    dist = _distance_matrix(points)

    links: set[tuple[int, int]] = set()
    k = min(max(1, neighbors), hub_count - 1)
    for i in range(hub_count):
        order = [j for j in np.argsort(dist[i], kind="stable") if j != i]
        for j in order[:k]:
            links.add((min(i, int(j)), max(i, int(j))))

    while True:
        rows = [a for a, b in links] + [b for a, b in links]
        cols = [b for a, b in links] + [a for a, b in links]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(hub_count, hub_count))
        n_comp, labels = connected_components(adj, directed=False)
        if n_comp == 1:
            break
        inside = labels == labels[0]
        sub = dist[np.ix_(inside, ~inside)]
        a_local, b_local = np.unravel_index(np.argmin(sub), sub.shape)
        a = int(np.flatnonzero(inside)[a_local])
        b = int(np.flatnonzero(~inside)[b_local])
        links.add((min(a, b), max(a, b)))

    return network_from_positions([tuple(p) for p in points.tolist()], sorted(links), speed_kmh)


def shortest_paths_from(network: RoadNetwork, origin: int) -> dict[int, tuple[int, ...]]:
    """Minimum-travel-time hub sequences from ``origin`` to every reachable hub.

    Among equal-time paths the lexicographically smallest hub sequence wins;
    the heap is keyed by ``(time, path)`` so the first settlement of a hub is
    already the tie-broken optimum.
    """
    if not 0 <= origin < network.hub_count:
        raise InvalidArgumentError(f"unknown hub {origin}")
    best: dict[int, tuple[int, ...]] = {}
    heap: list[tuple[int, tuple[int, ...]]] = [(0, (origin,))]
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in best:
            continue
        best[node] = path
        for seg in network.out_segments(node):
            if seg.target not in best:
                heapq.heappush(heap, (cost + seg.travel_time, path + (seg.target,)))
    return best


def route_from_hubs(network: RoadNetwork, hubs: Sequence[int]) -> Route:
    return Route(tuple(network.segment(a, b) for a, b in zip(hubs, hubs[1:])))


def shortest_route(network: RoadNetwork, origin: int, destination: int) -> Route:
    if origin == destination:
        raise InvalidArgumentError("origin and destination must differ")
    if not 0 <= destination < network.hub_count:
        raise InvalidArgumentError(f"unknown hub {destination}")
    paths = shortest_paths_from(network, origin)
    if destination not in paths:
        raise NoRouteError(f"hub {destination} unreachable from {origin}")
    return route_from_hubs(network, paths[destination])


def gravity_flow(network: RoadNetwork, seed: int, noise_sigma: float = 0.5) -> FlowMatrix:
    """Synthetic OD flows ``F_ij ~ 1 / (1 + d_ij / mean_d)`` times log-normal noise."""
    points = np.array([(h.x, h.y) for h in network.hubs])
    dist = _distance_matrix(points)
    n = len(points)
    off = ~np.eye(n, dtype=bool)
    mean_d = dist[off].mean()
    if mean_d <= 0:
        mean_d = 1.0
    rng = np.random.default_rng(seed)
    noise = rng.lognormal(0.0, noise_sigma, size=(n, n))
    flow = np.where(off, noise / (1.0 + dist / mean_d), 0.0)
    return FlowMatrix(flow)


def sample_missions(network: RoadNetwork, flow: FlowMatrix, count: int, seed: int) -> list[tuple[int, int]]:
    """Draw ``count`` independent (origin, destination) pairs with probability F_ij / sum(F)."""
    n = network.hub_count
    if flow.flow.shape != (n, n):
        raise InvalidArgumentError(f"flow matrix shape {flow.flow.shape} does not match {n} hubs")
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    rng = np.random.default_rng(seed)
    cells = rng.choice(n * n, size=count, p=flow.probabilities().ravel())
    return [(int(c) // n, int(c) % n) for c in cells]


def assign_fleets(truck_count: int, dist: FleetDistribution, seed: int) -> list[int]:
    """Fleet id for each truck; fleets numbered 0.. in bucket order, trucks shuffled."""
    residual = truck_count - dist.truck_count
    if residual != 0:
        raise InvalidArgumentError(
            f"fleet distribution covers {dist.truck_count} trucks, {truck_count} requested "
            f"(residual {residual})"
        )
    labels = np.repeat(np.arange(dist.fleet_count), dist.fleet_sizes())
    rng = np.random.default_rng(seed)
    return [int(x) for x in rng.permutation(labels)]


@dataclass(frozen=True)
class ScenarioConfig:
    hub_count: int = 105
    truck_count: int = 5000
    fleet_distribution: str = "table1"
    window: tuple[int, int] = WINDOW_08_09
    waiting_budget_fraction: float = 0.10
    speed_kmh: float = DEFAULT_SPEED_KMH
    economics: EconomicParams = field(default_factory=EconomicParams)
    seed: int = 1
    side_km: float = DEFAULT_SIDE_KM
    neighbors: int = DEFAULT_NEIGHBORS

    def __post_init__(self):
        if self.hub_count < 2:
            raise InvalidArgumentError("hub_count must be at least 2")
        if self.truck_count < 1:
            raise InvalidArgumentError("truck_count must be positive")
        lo, hi = self.window
        if not 0 <= lo < hi:
            raise InvalidArgumentError("start window must satisfy 0 <= start < end")
        if self.waiting_budget_fraction < 0:
            raise InvalidArgumentError("waiting budget fraction must be non-negative")
        if self.speed_kmh <= 0 or self.side_km <= 0 or self.neighbors < 1:
            raise InvalidArgumentError("speed, side and neighbors must be positive")
        object.__setattr__(self, "window", (int(lo), int(hi)))

    def to_dict(self) -> dict:
        return {
            "hub_count": self.hub_count,
            "truck_count": self.truck_count,
            "fleet_distribution": self.fleet_distribution,
            "window_s": list(self.window),
            "waiting_budget_fraction": self.waiting_budget_fraction,
            "speed_kmh": self.speed_kmh,
            "economics": self.economics.to_dict(),
            "seed": self.seed,
            "side_km": self.side_km,
            "neighbors": self.neighbors,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        base = cls()
        fleets = data.get("fleet_distribution", base.fleet_distribution)
        if isinstance(fleets, list):
            fleets = FleetDistribution(tuple(tuple(b) for b in fleets)).to_text()
        return cls(
            hub_count=int(data.get("hub_count", base.hub_count)),
            truck_count=int(data.get("truck_count", base.truck_count)),
            fleet_distribution=str(fleets),
            window=tuple(data.get("window_s", base.window)),
            waiting_budget_fraction=float(data.get("waiting_budget_fraction", base.waiting_budget_fraction)),
            speed_kmh=float(data.get("speed_kmh", base.speed_kmh)),
            economics=EconomicParams.from_dict(data.get("economics", {})),
            seed=int(data.get("seed", base.seed)),
            side_km=float(data.get("side_km", base.side_km)),
            neighbors=int(data.get("neighbors", base.neighbors)),
        )


PRESETS = {
    "paper": ScenarioConfig(),
    "smoke": ScenarioConfig(hub_count=4, truck_count=10, fleet_distribution="single-vehicle", side_km=200.0),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


@dataclass(frozen=True, eq=False)
class Scenario:
    network: RoadNetwork
    trucks: tuple[Truck, ...]
    economics: EconomicParams
    rng_seed: int
    config: "ScenarioConfig | None" = None

    def __post_init__(self):
        ids = [t.id for t in self.trucks]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("truck ids must be unique")
        for t in self.trucks:
            for e in t.route.edges:
                if self.network.segments.get(e.key) != e:
                    raise InvalidArgumentError(f"truck {t.id} uses {e.key}, not in the network")

    @property
    def fleets(self) -> list[int]:
        return sorted({t.fleet for t in self.trucks})

    def truck(self, truck_id: int) -> Truck:
        for t in self.trucks:
            if t.id == truck_id:
                return t
        raise InvalidArgumentError(f"unknown truck {truck_id}")

    def to_dict(self) -> dict:
        out = {
            "hubs": [{"id": h.id, "x": h.x, "y": h.y} for h in self.network.hubs],
            "segments": [
                {"from": s.source, "to": s.target, "travel_time_s": s.travel_time}
                for _, s in sorted(self.network.segments.items())
            ],
            "trucks": [
                {
                    "id": t.id,
                    "fleet": t.fleet,
                    "route": list(t.route.hubs),
                    "start_time_s": t.start_time,
                    "deadline_s": t.deadline,
                    "waiting_loss_per_h": t.waiting_loss_rate,
                }
                for t in self.trucks
            ],
            "economics": self.economics.to_dict(),
            "seed": self.rng_seed,
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @classmethod
    def from_dict(cls, data: Mapping) -> "Scenario":
        try:
            hubs = tuple(Hub(int(h["id"]), float(h["x"]), float(h["y"])) for h in data["hubs"])
            segments = {}
            for s in data["segments"]:
                seg = RoadSegment(int(s["from"]), int(s["to"]), int(s["travel_time_s"]))
                if seg.key in segments:
                    raise InvalidArgumentError(f"duplicate segment {seg.key}")
                segments[seg.key] = seg
            network = RoadNetwork(hubs, segments)
            econ = EconomicParams.from_dict(data.get("economics", {}))
            trucks = tuple(
                Truck(
                    id=int(t["id"]),
                    fleet=int(t["fleet"]),
                    route=route_from_hubs(network, [int(h) for h in t["route"]]),
                    start_time=int(t["start_time_s"]),
                    deadline=int(t["deadline_s"]),
                    waiting_loss_rate=float(t.get("waiting_loss_per_h", econ.default_waiting_loss_rate)),
                )
                for t in data["trucks"]
            )
            config = ScenarioConfig.from_dict(data["config"]) if "config" in data else None
            return cls(network, trucks, econ, int(data.get("seed", 0)), config)
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"malformed scenario document: {exc!r}") from None


def save_scenario(scenario: Scenario, path: "str | Path") -> None:
    Path(path).write_text(scenario.dumps())


def load_scenario(path: "str | Path") -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from None
    return Scenario.from_dict(data)


def _child_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def deadline_for(start_time: int, travel_time: int, budget_fraction: float) -> int:
    """No-wait arrival plus a waiting budget of ``budget_fraction`` of the travel time (floored)."""
    budget = math.floor(round(travel_time * budget_fraction, 6))
    return start_time + travel_time + budget


def make_scenario(config: ScenarioConfig) -> Scenario:
    """Generate a complete, seeded scenario from ``config``."""
    s_net, s_flow, s_miss, s_fleet, s_start = _child_seeds(config.seed, 5)
    network = build_synthetic_network(
        config.hub_count, s_net, config.speed_kmh, config.side_km, config.neighbors
    )
    flow = gravity_flow(network, s_flow)
    missions = sample_missions(network, flow, config.truck_count, s_miss)
    dist = resolve_fleet_distribution(config.fleet_distribution, config.truck_count)
    fleets = assign_fleets(config.truck_count, dist, s_fleet)
    starts = np.random.default_rng(s_start).integers(
        config.window[0], config.window[1], size=config.truck_count
    )

    path_cache: dict[int, dict[int, tuple[int, ...]]] = {}
    route_cache: dict[tuple[int, int], Route] = {}
    trucks = []
    for i, ((o, d), fleet, start) in enumerate(zip(missions, fleets, starts.tolist())):
        if (o, d) not in route_cache:
            if o not in path_cache:
                path_cache[o] = shortest_paths_from(network, o)
            if d not in path_cache[o]:
                raise NoRouteError(f"hub {d} unreachable from {o}")
            route_cache[(o, d)] = route_from_hubs(network, path_cache[o][d])
        route = route_cache[(o, d)]
        trucks.append(
            Truck(
                id=i,
                fleet=fleet,
                route=route,
                start_time=int(start),
                deadline=deadline_for(int(start), route.travel_time, config.waiting_budget_fraction),
                waiting_loss_rate=config.economics.default_waiting_loss_rate,
            )
        )
    return Scenario(network, tuple(trucks), config.economics, config.seed, config)

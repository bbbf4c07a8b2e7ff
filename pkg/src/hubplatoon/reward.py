"""Partner identification and the multi-fleet economic model.

A truck's waiting decision at a hub is worth the *increase* in its fleet's
platooning profit on the next road segment (the stage reward), while every
second spent waiting costs the fleet ``waiting_loss_rate`` per hour (the
terminal reward, charged once at the destination).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple

from .errors import InfeasibleError, InternalConsistencyError, InvalidArgumentError

if TYPE_CHECKING:
    from .network import Truck

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class EconomicParams:
    """Monetary parameters of the platooning system (EUR, per hour)."""

    platoon_benefit_rate: float = 5.6
    fuel_saving_fraction: float = 0.10
    default_waiting_loss_rate: float = 25.0

    def __post_init__(self):
        for name in ("platoon_benefit_rate", "fuel_saving_fraction", "default_waiting_loss_rate"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "xi_per_follower_h": self.platoon_benefit_rate,
            "fuel_saving_fraction": self.fuel_saving_fraction,
            "epsilon_per_h": self.default_waiting_loss_rate,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EconomicParams":
        defaults = cls()
        return cls(
            platoon_benefit_rate=float(data.get("xi_per_follower_h", defaults.platoon_benefit_rate)),
            fuel_saving_fraction=float(data.get("fuel_saving_fraction", defaults.fuel_saving_fraction)),
            default_waiting_loss_rate=float(data.get("epsilon_per_h", defaults.default_waiting_loss_rate)),
        )


class PartnerPrediction(NamedTuple):
    truck: int
    fleet: int
    predicted_departure: int


class PartnerCounts(NamedTuple):
    same_fleet: int
    other_fleet: int

    @property
    def total(self) -> int:
        return self.same_fleet + self.other_fleet


def potential_partners(truck: "Truck", stage: int, all_trucks: Iterable["Truck"]) -> set[int]:
    """Ids of the other trucks whose route contains ``truck``'s edge number ``stage``.

    ``stage`` is the 0-based index of the edge in the truck's route.  Edges
    are ordered pairs, so a truck travelling the reverse direction is not a
    partner.
    """
    edges = truck.route.edges
    if not 0 <= stage < len(edges):
        raise InvalidArgumentError(f"stage {stage} outside route with {len(edges)} edges")
    key = edges[stage].key
    return {
        other.id
        for other in all_trucks
        if other.id != truck.id and any(e.key == key for e in other.route.edges)
    }


def predicted_partners(arrival: int, wait: int, candidates: Iterable[PartnerPrediction]) -> set[int]:
    """Candidates whose predicted departure equals ``arrival + wait`` exactly."""
    departure = arrival + wait
    return {c.truck for c in candidates if c.predicted_departure == departure}


def count_partners(matched: Iterable[PartnerPrediction], own_fleet: int) -> PartnerCounts:
    same = other = 0
    for p in matched:
        if p.fleet == own_fleet:
            same += 1
        else:
            other += 1
    return PartnerCounts(same, other)


def delta_f(counts: PartnerCounts, partner_set_empty: bool) -> float:
    """Dimensionless profit increase of joining a predicted platoon.

    With ``n = same + other`` partners, joining turns an n-platoon into an
    (n+1)-platoon; the closed form is ``1 - other / ((n + 1) * n)``.
    """
    same, other = counts
    if same < 0 or other < 0:
        raise InvalidArgumentError("partner counts must be non-negative")
    if partner_set_empty:
        if same or other:
            raise InternalConsistencyError("empty partner set with non-zero counts")
        return 0.0
    n = same + other
    if n == 0:
        raise InternalConsistencyError("non-empty partner set with zero counts")
    return 1.0 - other / ((n + 1) * n)


def stage_reward(
    edge_travel_time: int,
    counts: PartnerCounts,
    partner_set_empty: bool,
    econ: EconomicParams,
) -> float:
    if edge_travel_time <= 0:
        raise InvalidArgumentError("edge travel time must be positive")
    if partner_set_empty:
        return 0.0
    hours = edge_travel_time / SECONDS_PER_HOUR
    return econ.platoon_benefit_rate * hours * delta_f(counts, False)


def terminal_reward(
    arrival_at_destination: int,
    arrival_at_current: int,
    remaining_travel: int,
    waiting_loss_rate: float,
) -> float:
    """Negative waiting loss accumulated between the current hub and the destination."""
    waited = arrival_at_destination - arrival_at_current - remaining_travel
    if waited < 0:
        raise InfeasibleError(
            f"destination arrival {arrival_at_destination} earlier than the no-wait arrival "
            f"{arrival_at_current + remaining_travel}"
        )
    return -waiting_loss_rate * (waited / SECONDS_PER_HOUR)


def average_platoon_profit(platoon_size: int, edge_travel_time: int, econ: EconomicParams) -> float:
    """Per-member share of the platoon's profit on one edge (leader earns nothing, all share evenly)."""
    if platoon_size < 1:
        raise InvalidArgumentError("platoon size must be at least 1")
    hours = edge_travel_time / SECONDS_PER_HOUR
    return econ.platoon_benefit_rate * hours * (platoon_size - 1) / platoon_size

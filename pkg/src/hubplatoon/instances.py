"""Seeded random decision instances for cross-checks and benchmarks."""

from __future__ import annotations

import numpy as np

from .dp import DpInstance, Stage
from .reward import EconomicParams


def random_instance(
    rng: "np.random.Generator | int",
    min_stages: int = 1,
    max_stages: int = 5,
    max_partners: int = 10,
    grid: "int | None" = None,
    econ: "EconomicParams | None" = None,
) -> DpInstance:
    """A small instance with partners scattered around the no-wait departure chain.

    With ``grid`` set, every time is a multiple of ``grid`` seconds, which
    makes exact coincidences (and therefore value ties) common.  When
    ``grid`` is None it is drawn at random from {1, 60}.
    """
    rng = np.random.default_rng(rng)
    econ = econ or EconomicParams()
    if grid is None:
        grid = int(rng.choice([1, 60]))
    n = int(rng.integers(min_stages, max_stages + 1))
    taus = (rng.integers(600 // grid, 7200 // grid + 1, size=n) * grid).tolist()
    arrival = int(rng.integers(28800 // grid, 32400 // grid)) * grid
    total = sum(taus)
    budget = int(rng.integers(0, int(0.15 * total) // grid + 2)) * grid
    eps = float(rng.choice([25.0, 25.0, 10.0, 60.0, 0.0]))

    stages = []
    chain = arrival
    truck_id = 1
    for tau in taus:
        k = int(rng.integers(0, max_partners + 1))
        offsets = rng.integers(-600 // grid, (budget + 600) // grid + 1, size=k) * grid
        fleets = rng.integers(0, 4, size=k)
        stages.append(Stage(tau, np.arange(truck_id, truck_id + k), fleets, chain + offsets))
        truck_id += k
        chain += tau
    return DpInstance(tuple(stages), arrival, arrival + total + budget, 0, econ, eps)


def table3_like_instance(
    seed: int = 0,
    n_stages: int = 6,
    partners_per_stage: int = 100,
    leg_seconds: int = 2240,
) -> DpInstance:
    """A large instance shaped like the slowest enumeration benchmark case.

    Six legs of about 37 minutes, a 10 % waiting budget, and a hundred
    partners per leg spread over the reachable departure window.  The
    defaults give a largest per-stage decision set of roughly 1300 options.
    """
    rng = np.random.default_rng(seed)
    taus = [leg_seconds] * n_stages
    arrival = 30900
    total = sum(taus)
    budget = total // 10
    stages = []
    chain = arrival
    truck_id = 1
    for tau in taus:
        k = partners_per_stage
        offsets = rng.integers(-300, budget + 1, size=k)
        fleets = rng.integers(0, 40, size=k)
        stages.append(Stage(tau, np.arange(truck_id, truck_id + k), fleets, chain + offsets))
        truck_id += k
        chain += tau
    return DpInstance(tuple(stages), arrival, arrival + total + budget, 0, EconomicParams(), 25.0)

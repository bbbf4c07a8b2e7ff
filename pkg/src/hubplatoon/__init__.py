"""Hub-based multi-fleet truck platoon coordination: exact per-truck waiting-time
optimization and a discrete-event simulator for comparing coordination schemes."""

from .coordination import HubBoard, SchemeKind, on_arrival
from .dp import DpInstance, SolveResult, Stage, brute_force_solve, solve
from .network import RoadNetwork, Scenario, ScenarioConfig, Truck, make_scenario
from .reward import EconomicParams
from .sim import MetricsReport, compare_schemes, run_simulation

__version__ = "0.1.0"

__all__ = [
    "DpInstance",
    "EconomicParams",
    "HubBoard",
    "MetricsReport",
    "RoadNetwork",
    "Scenario",
    "ScenarioConfig",
    "SchemeKind",
    "SolveResult",
    "Stage",
    "Truck",
    "brute_force_solve",
    "compare_schemes",
    "make_scenario",
    "on_arrival",
    "run_simulation",
    "solve",
]

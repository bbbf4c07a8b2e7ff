"""Command-line interface: generate scenarios, run schemes, compare them, benchmark the solver.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import random
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .coordination import SchemeKind
from .dp import DEFAULT_GUARD, brute_force_solve, decision_space_sizes, solve
from .errors import InternalConsistencyError, PlatoonError, ResourceLimitError
from .network import PRESETS, ScenarioConfig, load_scenario, make_scenario, preset, save_scenario
from .reward import EconomicParams
from .sim import compare_schemes, run_simulation, write_comparison, write_outputs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
BENCH_COLUMNS = ["case", "n_tilde", "N_i", "enum_seconds", "dp_seconds", "values_equal"]
VALUE_TOLERANCE = 1e-9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _window(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected START,END in seconds from midnight") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hubplatoon", description="Hub-based multi-fleet truck platoon coordination.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="create a synthetic scenario file")
    gen.add_argument("--preset", choices=sorted(PRESETS), help="start from a named parameter set")
    gen.add_argument("--config", type=Path, help="JSON config (or an existing scenario) to start from")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--hubs", type=int)
    gen.add_argument("--trucks", type=int)
    gen.add_argument("--fleets", help="table1, single-vehicle, one-fleet, or SIZExCOUNT,... buckets")
    gen.add_argument("--window", type=_window, help="start window START,END in seconds")
    gen.add_argument("--budget", type=float, help="waiting budget as a fraction of travel time")
    gen.add_argument("--speed", type=float, help="speed in km/h")
    gen.add_argument("--side", type=float, help="side of the square hubs are placed in, km")
    gen.add_argument("--xi", type=float, help="platooning benefit per follower hour")
    gen.add_argument("--epsilon", type=float, help="waiting loss per hour")
    gen.add_argument("--fuel", type=float, help="follower fuel saving fraction")
    gen.add_argument("-o", "--out", type=Path, required=True)

    run = sub.add_parser("run", help="simulate one coordination scheme")
    run.add_argument("scenario", type=Path)
    run.add_argument("--scheme", choices=[k.value for k in SchemeKind], default=SchemeKind.PREDICTIVE.value)
    run.add_argument("-o", "--out", type=Path, required=True)
    run.add_argument("--no-timings", action="store_true", help="omit wall-clock figures from metrics.json")

    cmp_ = sub.add_parser("compare", help="simulate all three schemes side by side")
    cmp_.add_argument("scenario", type=Path)
    cmp_.add_argument("-o", "--out", type=Path, required=True)

    bench = sub.add_parser("bench", help="time the solver against full enumeration on sampled decisions")
    bench.add_argument("scenario", type=Path)
    bench.add_argument("--samples", type=int, default=5)
    bench.add_argument("--guard", type=int, default=DEFAULT_GUARD, help="max wait combinations to enumerate")
    bench.add_argument("--seed", type=int, help="sampling seed (defaults to the scenario seed)")
    bench.add_argument("-o", "--out", type=Path, required=True, help="CSV output path")
    return parser


def _config_from_args(args) -> ScenarioConfig:
    if args.config is not None:
        data = json.loads(args.config.read_text())
        config = ScenarioConfig.from_dict(data.get("config", data))
        if args.preset:
            raise UsageError("--preset and --config are mutually exclusive")
    else:
        config = preset(args.preset or "paper")

    econ = config.economics
    econ = EconomicParams(
        platoon_benefit_rate=econ.platoon_benefit_rate if args.xi is None else args.xi,
        fuel_saving_fraction=econ.fuel_saving_fraction if args.fuel is None else args.fuel,
        default_waiting_loss_rate=econ.default_waiting_loss_rate if args.epsilon is None else args.epsilon,
    )
    overrides = {
        "seed": args.seed,
        "hub_count": args.hubs,
        "truck_count": args.trucks,
        "fleet_distribution": args.fleets,
        "window": args.window,
        "waiting_budget_fraction": args.budget,
        "speed_kmh": args.speed,
        "side_km": args.side,
    }
    return replace(config, economics=econ, **{k: v for k, v in overrides.items() if v is not None})


def cmd_generate(args) -> int:
    scenario = make_scenario(_config_from_args(args))
    save_scenario(scenario, args.out)
    n = len(scenario.trucks)
    mean_hours = sum(t.route.travel_time for t in scenario.trucks) / n / 3600 if n else 0.0
    mean_edges = sum(len(t.route.edges) for t in scenario.trucks) / n if n else 0.0
    print(
        f"wrote {args.out}: {scenario.network.hub_count} hubs, {n} trucks, {len(scenario.fleets)} fleets, "
        f"mean route {mean_edges:.2f} edges / {mean_hours:.2f} h"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    run = run_simulation(scenario, args.scheme)
    write_outputs(run, args.out, timings=not args.no_timings)
    r = run.report
    print(
        f"{r.scheme}: total reward {r.total_reward:.2f}, fuel saving {100 * r.fuel_saving:.3f}%, "
        f"{r.n_platoons} platoons, deadline violations {r.deadline_violations}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    runs = compare_schemes(scenario)
    path = write_comparison(runs, args.out)
    for scheme, run in runs.items():
        r = run.report
        print(f"{scheme.value:>12}: total reward {r.total_reward:10.2f}  fuel saving {100 * r.fuel_saving:.3f}%")
    print(f"wrote {path}")
    return EXIT_OK


def _sample_instances(scenario, count: int, seed: int) -> list:
    """Reservoir-sample ``count`` decision instances met during a predictive run."""
    rng = random.Random(seed)
    reservoir: list = []
    seen = 0

    def observe(instance, _result):
        nonlocal seen
        seen += 1
        if len(reservoir) < count:
            reservoir.append(instance)
        else:
            j = rng.randrange(seen)
            if j < count:
                reservoir[j] = instance

    run_simulation(scenario, SchemeKind.PREDICTIVE, observer=observe)
    return reservoir


def bench_rows(instances, guard: int) -> list[dict]:
    rows = []
    for case, instance in enumerate(instances, start=1):
        started = time.perf_counter()
        dp = solve(instance)
        dp_seconds = time.perf_counter() - started
        row = {
            "case": case,
            "n_tilde": max(decision_space_sizes(instance, dp.states)),
            "N_i": instance.n_stages + 1,
            "dp_seconds": f"{dp_seconds:.6f}",
        }
        try:
            started = time.perf_counter()
            enum = brute_force_solve(instance, guard)
            row["enum_seconds"] = f"{time.perf_counter() - started:.6f}"
            same = enum.waits == dp.waits and abs(enum.value - dp.value) <= VALUE_TOLERANCE
            row["values_equal"] = str(same).lower()
        except ResourceLimitError:
            row["enum_seconds"] = "skipped"
            row["values_equal"] = "skipped"
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    if args.samples < 0:
        raise UsageError("--samples must be non-negative")
    scenario = load_scenario(args.scenario)
    seed = scenario.rng_seed if args.seed is None else args.seed
    instances = _sample_instances(scenario, args.samples, seed) if args.samples else []
    rows = bench_rows(instances, args.guard)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    mismatches = sum(1 for r in rows if r["values_equal"] == "false")
    print(f"wrote {args.out}: {len(rows)} cases, {mismatches} mismatches")
    return EXIT_OK if mismatches == 0 else EXIT_INTERNAL


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "compare": cmd_compare, "bench": cmd_bench}


def main(argv: "Sequence[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hubplatoon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InternalConsistencyError, AssertionError) as exc:
        print(f"hubplatoon: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (PlatoonError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"hubplatoon: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

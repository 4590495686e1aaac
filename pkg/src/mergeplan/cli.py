"""Scenario runner: load a JSON config, simulate, write the output bundle.

Outputs:
  results.csv   one line per planned alternative per cycle
  profiles.csv  per-cycle motion profiles (s, v, a, j) of every alternative
  pathtime.json per-cycle path-time data: ego variants, hypothesis bands,
                truncations and the t_o marker (schema version 1)
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .simulator import ScenarioConfig, SimOutput, run

log = logging.getLogger("mergeplan")

PATHTIME_SCHEMA_VERSION = 1


def _fmt(value, digits: int = 6) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def write_results_csv(path: Path, output: SimOutput) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "alternative", "collision_probability", "cost", "decision"])
        for row in output.rows:
            writer.writerow(
                [
                    f"{row.timestamp:.2f}",
                    row.alternative,
                    _fmt(row.collision_probability),
                    _fmt(row.cost, 3),
                    row.decision,
                ]
            )


def write_profiles_csv(path: Path, output: SimOutput) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle_t", "alternative", "k", "t", "s", "v", "a", "j"])
        for rec in output.profiles:
            writer.writerow(
                [
                    f"{rec['cycle_t']:.2f}",
                    rec["alternative"],
                    rec["k"],
                    f"{rec['t']:.2f}",
                    _fmt(rec["s"]),
                    "" if rec["v"] is None else _fmt(rec["v"]),
                    "" if rec["a"] is None else _fmt(rec["a"]),
                    "" if rec["j"] is None else _fmt(rec["j"]),
                ]
            )


def write_pathtime_json(path: Path, output: SimOutput) -> None:
    doc = {"version": PATHTIME_SCHEMA_VERSION, "cycles": output.pathtime}
    with path.open("w") as fh:
        json.dump(doc, fh, indent=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergeplan",
        description="Closed-loop intersection planning with postponed maneuver decisions",
    )
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the rng seed")
    parser.add_argument("--dt", type=float, default=None, help="override the sampling interval (s)")
    parser.add_argument("--horizon-points", type=int, default=None, help="override the horizon length")
    parser.add_argument(
        "--tc-variants",
        default=None,
        help="comma separated branch times in seconds, e.g. 0.25,0.5",
    )
    parser.add_argument("--entropy-max", type=float, default=None, help="override the entropy gate")
    parser.add_argument("--pcoll-max", type=float, default=None, help="override the risk threshold")
    parser.add_argument("--log-level", default="INFO")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO))

    try:
        raw = json.loads(Path(args.scenario).read_text())
        config = ScenarioConfig.from_dict(raw)
        if args.seed is not None:
            config.seed = args.seed
        if args.dt is not None:
            config.dt = args.dt
        if args.horizon_points is not None:
            config.n_points = args.horizon_points
        if args.tc_variants is not None:
            times = [float(v) for v in args.tc_variants.split(",") if v.strip()]
            t_pin = config.pin_index * config.dt
            config.tc_factors = tuple(t / t_pin for t in times)
        if args.entropy_max is not None or args.pcoll_max is not None:
            from .decision import DecisionThresholds

            config.thresholds = DecisionThresholds(
                entropy_max=args.entropy_max
                if args.entropy_max is not None
                else config.thresholds.entropy_max,
                p_coll_max=args.pcoll_max
                if args.pcoll_max is not None
                else config.thresholds.p_coll_max,
            )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        log.error("invalid scenario configuration: %s", exc)
        return 1

    output = run(config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(out_dir / "results.csv", output)
    write_profiles_csv(out_dir / "profiles.csv", output)
    write_pathtime_json(out_dir / "pathtime.json", output)
    log.info("wrote %d result rows to %s", len(output.rows), out_dir)

    if output.aborted is not None:
        log.error("simulation aborted: %s", output.aborted)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

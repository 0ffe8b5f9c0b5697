"""Command-line interface: run, sweep, compare, validate.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from . import engine, harness
from .corridor import build_corridor
from .errors import ArterialError, SpecParseError
from .files import parse_sections
from .reservation import LosClass


def _cmd_validate(args) -> int:
    path = pathlib.Path(args.file)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        sections = parse_sections(text)
        kinds = {s.kind for s in sections}
        if "link" in kinds or "corridor" in kinds:
            corridor = build_corridor(text)
            n_sig = len(corridor.intersections)
            print(f"ok: corridor '{corridor.name}', {len(corridor.links)} links, {n_sig} intersections")
        elif "scenario" in kinds:
            config = engine.parse_scenario(text, base_dir=path.parent)
            print(f"ok: scenario on '{config.testbed}', los={config.los.value}, mp={config.mp}")
        elif "sweep" in kinds:
            config = harness.parse_sweep(text, base_dir=path.parent)
            total = sum(1 for _ in config.combinations())
            print(f"ok: sweep with {total} runs")
        else:
            print(f"error: unrecognized file kind (sections: {sorted(kinds)})", file=sys.stderr)
            return 1
    except ArterialError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_run(args) -> int:
    path = pathlib.Path(args.scenario)
    try:
        config = engine.parse_scenario(path.read_text(), base_dir=path.parent)
    except (OSError, ArterialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.seed = args.seed
    try:
        metrics = engine.run(config)
    except ArterialError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    formats = args.format.split(",")
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in formats:
        csv_path = out_dir / "run.csv"
        csv_path.write_text(
            ",".join(engine.CSV_COLUMNS) + "\n" + engine.metrics_csv_row(config, metrics) + "\n"
        )
        print(f"wrote {csv_path}")
    if "json" in formats:
        payload = {
            "testbed": config.testbed,
            "los": config.los.value,
            "mp": config.mp,
            "reserved_mode": config.mode_label(),
            "reserved_count": metrics.reserved_count,
            "seed": config.seed,
            "avg_delay_s": metrics.avg_delay_s,
            "vehicles_served": metrics.vehicles_served,
            "total_travel_time_vh": metrics.total_travel_time_vh,
            "vehicles_generated": metrics.vehicles_generated,
            "audits": {
                "collisions": metrics.collisions,
                "red_violations": metrics.red_violations,
                "reserved_violations": metrics.reserved_violations,
                "missed_diverges": metrics.missed_diverges,
            },
            "series": [
                {
                    "t_start": rec.t_start,
                    "vehicles_served": rec.vehicles_served,
                    "avg_delay_s": rec.avg_delay_s,
                    "travel_time_vh": rec.travel_time_vh,
                }
                for rec in metrics.series
            ],
        }
        json_path = out_dir / "run.json"
        json_path.write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {json_path}")
    print(
        f"served={metrics.vehicles_served} avg_delay={metrics.avg_delay_s:.1f}s "
        f"total_travel_time={metrics.total_travel_time_vh:.2f}veh-h"
    )
    return 0


def _cmd_sweep(args) -> int:
    path = pathlib.Path(args.sweep)
    try:
        config = harness.parse_sweep(path.read_text(), base_dir=path.parent)
    except (OSError, ArterialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        config.out_dir = args.out
    total = sum(1 for _ in config.combinations())

    def progress(row):
        print(f"  done {row.testbed} {row.los} mp={row.mp:.1f} {row.reserved_mode} seed={row.seed}")

    try:
        rows = harness.sweep(config, workers=args.workers, progress=progress if args.verbose else None)
    except ArterialError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    print(f"sweep complete: {len(rows)}/{total} rows -> {config.out_dir}/matrix.csv")
    for testbed in config.testbeds:
        for los in config.los_levels:
            if len(config.lane_modes) >= 2:
                try:
                    comparison = harness.compare(rows, testbed, los, modes=tuple(config.lane_modes[:2]))
                except ArterialError:
                    continue
                harness.emit_report(
                    comparison, config.out_dir, modes=tuple(config.lane_modes[:2]),
                    stem=f"{testbed}_{los.value}",
                )
                cross = harness.crossover_mp(comparison, modes=tuple(config.lane_modes[:2]))
                label = f"{cross:.1f}" if cross is not None else "none"
                print(f"  {testbed}/{los.value}: reservation crossover at mp={label}")
    return 0


def _cmd_compare(args) -> int:
    try:
        matrix = harness.load_matrix(args.matrix)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    modes = tuple(args.modes.split(","))
    try:
        los = LosClass.parse(args.los)
        rows = harness.compare(matrix, args.testbed, los, modes=modes)
        files = harness.emit_report(rows, args.out, formats=tuple(args.format.split(",")),
                                    modes=modes, stem=f"{args.testbed}_{los.value}")
    except ArterialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in files:
        print(f"wrote {path}")
    cross = harness.crossover_mp(rows, modes=modes)
    label = f"{cross:.1f}" if cross is not None else "none"
    print(f"reservation crossover at mp={label}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="arterialsim",
                                     description="Signalized-arterial microsimulation with reserved lanes "
                                                 "and speed advisories for automated vehicles")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--format", default="csv,json")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run an evaluation matrix")
    p_sweep.add_argument("sweep")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--verbose", action="store_true")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cmp = sub.add_parser("compare", help="with/without comparison from a matrix CSV")
    p_cmp.add_argument("matrix")
    p_cmp.add_argument("--testbed", required=True)
    p_cmp.add_argument("--los", required=True)
    p_cmp.add_argument("--modes", default="off,auto")
    p_cmp.add_argument("--out", default="results")
    p_cmp.add_argument("--format", default="csv,json,svg")
    p_cmp.set_defaults(func=_cmd_compare)

    p_val = sub.add_parser("validate", help="lint a corridor/scenario/sweep file")
    p_val.add_argument("file")
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

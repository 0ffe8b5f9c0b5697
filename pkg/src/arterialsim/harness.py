"""Experiment harness: sweeps over (testbed, LOS, penetration, lane mode,
seed), with/without-reservation comparisons, crossover detection and reports.

Sweep results are persisted incrementally so an interrupted sweep resumes and
still produces a byte-identical matrix CSV.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import pathlib
from dataclasses import dataclass, field, replace as dc_replace

from .engine import CSV_COLUMNS, RunMetrics, ScenarioConfig, load_corridor, run
from .errors import IncompleteMatrix, IoFailure
from .files import parse_sections
from .reservation import LosClass

DEFAULT_MP_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
METRICS = ("avg_delay_s", "vehicles_served", "total_travel_time_vh")


@dataclass
class SweepConfig:
    testbeds: tuple[str, ...] = ("princeton",)
    los_levels: tuple[LosClass, ...] = (LosClass.A_TO_C,)
    mp_levels: tuple[float, ...] = DEFAULT_MP_LEVELS
    lane_modes: tuple[str, ...] = ("off", "auto")
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "results"
    warmup: float = 900.0
    duration: float = 3600.0
    dt: float = 0.1
    base_dir: str | None = None

    def __post_init__(self):
        mps = tuple(self.mp_levels)
        if list(mps) != sorted(set(mps)) or any(not 0 <= m <= 1 for m in mps):
            raise ValueError("mp_levels must be sorted, unique and within [0, 1]")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def combinations(self):
        for testbed in self.testbeds:
            for los in self.los_levels:
                for mp in self.mp_levels:
                    for mode in self.lane_modes:
                        for seed in self.seeds:
                            yield (testbed, los, mp, mode, seed)


@dataclass
class ResultRow:
    testbed: str
    los: str
    mp: float
    reserved_mode: str
    reserved_count: int
    seed: int
    avg_delay_s: float
    vehicles_served: int
    total_travel_time_vh: float
    metrics: RunMetrics | None = None  # full metrics incl. audits (in-memory only)

    def key(self):
        return (self.testbed, self.los, f"{self.mp:.2f}", self.reserved_mode, self.seed)

    def csv_values(self):
        return (
            self.testbed, self.los, f"{self.mp:.2f}", self.reserved_mode,
            str(self.reserved_count), str(self.seed),
            f"{self.avg_delay_s:.6f}", str(self.vehicles_served),
            f"{self.total_travel_time_vh:.6f}",
        )


def _mode_to_config(mode: str):
    if mode.startswith("fixed"):
        count = int(mode.split(":", 1)[1]) if ":" in mode else 1
        return "fixed", count
    return mode, 1


def make_config(testbed: str, los: LosClass, mp: float, mode: str, seed: int,
                sweep: SweepConfig) -> ScenarioConfig:
    corridor = load_corridor(testbed, sweep.base_dir)
    mode_name, count = _mode_to_config(mode)
    return ScenarioConfig(
        corridor=corridor, los=los, mp=mp,
        reserved_lane_mode=mode_name, reserved_fixed_count=count,
        seed=seed, warmup=sweep.warmup, duration=sweep.duration, dt=sweep.dt,
        testbed=testbed,
    )


def run_one(testbed: str, los: LosClass, mp: float, mode: str, seed: int,
            sweep: SweepConfig) -> ResultRow:
    config = make_config(testbed, los, mp, mode, seed, sweep)
    metrics = run(config)
    return ResultRow(
        testbed=testbed, los=los.value, mp=mp, reserved_mode=mode,
        reserved_count=metrics.reserved_count, seed=seed,
        avg_delay_s=metrics.avg_delay_s, vehicles_served=metrics.vehicles_served,
        total_travel_time_vh=metrics.total_travel_time_vh, metrics=metrics,
    )


def _matrix_path(out_dir):
    return pathlib.Path(out_dir) / "matrix.csv"


def _partial_path(out_dir):
    return pathlib.Path(out_dir) / "matrix.partial.csv"


def load_matrix(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                ResultRow(
                    testbed=rec["testbed"], los=rec["los"], mp=float(rec["mp"]),
                    reserved_mode=rec["reserved_mode"], reserved_count=int(rec["reserved_count"]),
                    seed=int(rec["seed"]), avg_delay_s=float(rec["avg_delay_s"]),
                    vehicles_served=int(rec["vehicles_served"]),
                    total_travel_time_vh=float(rec["total_travel_time_vh"]),
                )
            )
    return rows


def write_matrix(rows: list[ResultRow], path):
    rows = sorted(rows, key=lambda r: r.key())
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(row.csv_values()) + "\n")
    pathlib.Path(path).write_text(buf.getvalue())


def sweep(config: SweepConfig, workers: int = 1, progress=None) -> list[ResultRow]:
    """Execute the full evaluation matrix; completed rows found on disk are
    reused, new rows are appended incrementally, and the final matrix CSV is
    rewritten in canonical order."""
    out_dir = pathlib.Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done: dict[tuple, ResultRow] = {}
    for path in (_matrix_path(out_dir), _partial_path(out_dir)):
        if path.exists():
            for row in load_matrix(path):
                done[row.key()] = row

    todo = []
    for testbed, los, mp, mode, seed in config.combinations():
        key = (testbed, los.value, f"{mp:.2f}", mode, seed)
        if key not in done:
            todo.append((testbed, los, mp, mode, seed))

    partial = _partial_path(out_dir)
    new_partial = not partial.exists()
    with open(partial, "a", newline="") as fh:
        if new_partial:
            fh.write(",".join(CSV_COLUMNS) + "\n")
        if workers > 1 and len(todo) > 1:
            import concurrent.futures

            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(run_one, *item, config): item for item in todo}
                for fut in concurrent.futures.as_completed(futures):
                    row = fut.result()
                    done[row.key()] = row
                    fh.write(",".join(row.csv_values()) + "\n")
                    fh.flush()
                    if progress:
                        progress(row)
        else:
            for item in todo:
                row = run_one(*item, config)
                done[row.key()] = row
                fh.write(",".join(row.csv_values()) + "\n")
                fh.flush()
                if progress:
                    progress(row)

    wanted = [
        done[(tb, los.value, f"{mp:.2f}", mode, seed)]
        for tb, los, mp, mode, seed in config.combinations()
    ]
    write_matrix(wanted, _matrix_path(out_dir))
    partial.unlink(missing_ok=True)
    return sorted(wanted, key=lambda r: r.key())


# ------------------------------------------------------------------ compare

@dataclass
class ComparisonRow:
    mp: float
    stats: dict = field(default_factory=dict)
    # stats[metric] = {mode: (mean, std)}, plus reductions/differences below
    reductions: dict = field(default_factory=dict)  # stats[metric][mode] -> pct vs baseline
    with_vs_without: dict = field(default_factory=dict)  # metric -> pct difference

    def flat(self, modes):
        out = {"mp": f"{self.mp:.2f}"}
        for metric in METRICS:
            for mode in modes:
                mean, std = self.stats[metric][mode]
                tag = mode.replace(":", "")
                out[f"{metric}_{tag}_mean"] = f"{mean:.6f}"
                out[f"{metric}_{tag}_std"] = f"{std:.6f}"
                out[f"{metric}_{tag}_reduction_pct"] = f"{self.reductions[metric][mode]:.4f}"
            out[f"{metric}_with_vs_without_pct"] = f"{self.with_vs_without[metric]:.4f}"
        return out


def _mean_std(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((x - mean) ** 2 for x in values) / n
    return mean, math.sqrt(var)


def compare(matrix: list[ResultRow], testbed: str, los: LosClass | str,
            modes: tuple[str, str] = ("off", "auto")) -> list[ComparisonRow]:
    """Per-penetration with/without comparison. Percent reductions are against
    the (mode=off, mp=0) baseline; the with-vs-without difference uses the
    paired seed sets."""
    los_val = los.value if isinstance(los, LosClass) else los
    rows = [r for r in matrix if r.testbed == testbed and r.los == los_val]
    without, with_ = modes
    by_cell: dict[tuple[str, float], dict[int, ResultRow]] = {}
    for r in rows:
        if r.reserved_mode in modes:
            by_cell.setdefault((r.reserved_mode, r.mp), {})[r.seed] = r
    mps = sorted({mp for (_mode, mp) in by_cell})
    if not mps:
        raise IncompleteMatrix(f"no rows for testbed '{testbed}', los '{los_val}'")
    base_cell = by_cell.get((without, 0.0))
    if not base_cell:
        raise IncompleteMatrix(f"missing baseline (mode={without}, mp=0) for '{testbed}' / '{los_val}'")
    baseline = {m: _mean_std([getattr(r, m) for r in base_cell.values()])[0] for m in METRICS}

    out = []
    for mp in mps:
        row = ComparisonRow(mp=mp)
        seed_sets = {}
        for mode in modes:
            cell = by_cell.get((mode, mp))
            if not cell:
                raise IncompleteMatrix(f"missing cell (mode={mode}, mp={mp}) for '{testbed}' / '{los_val}'")
            seed_sets[mode] = set(cell)
        if seed_sets[without] != seed_sets[with_]:
            raise IncompleteMatrix(f"seed sets differ between modes at mp={mp} (paired design required)")
        for metric in METRICS:
            row.stats[metric] = {}
            row.reductions[metric] = {}
            for mode in modes:
                values = [getattr(r, metric) for _s, r in sorted(by_cell[(mode, mp)].items())]
                mean, std = _mean_std(values)
                row.stats[metric][mode] = (mean, std)
                base = baseline[metric]
                row.reductions[metric][mode] = 100.0 * (base - mean) / base if base else 0.0
            mean_wo = row.stats[metric][without][0]
            mean_w = row.stats[metric][with_][0]
            row.with_vs_without[metric] = 100.0 * (mean_wo - mean_w) / mean_wo if mean_wo else 0.0
        out.append(row)
    return out


def crossover_mp(rows: list[ComparisonRow], modes=("off", "auto")) -> float | None:
    """Smallest penetration at which mean travel time with reservation beats
    the no-reservation mode; the empirical reservation threshold."""
    without, with_ = modes
    for row in rows:
        tt = row.stats["total_travel_time_vh"]
        if tt[with_][0] < tt[without][0]:
            return row.mp
    return None


# ------------------------------------------------------------------ reports

def emit_report(rows: list[ComparisonRow], out_dir, formats=("csv", "json", "svg"),
                modes: tuple[str, str] = ("off", "auto"), stem: str = "comparison"):
    """Write comparison tables (CSV/JSON) and per-metric charts (SVG)."""
    if not rows:
        raise ValueError("no comparison rows to report")
    out_dir = pathlib.Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        flat = [row.flat(modes) for row in rows]
        if "csv" in formats:
            path = out_dir / f"{stem}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(flat[0]))
                writer.writeheader()
                writer.writerows(flat)
            written.append(path)
        if "json" in formats:
            path = out_dir / f"{stem}.json"
            path.write_text(json.dumps(flat, indent=2) + "\n")
            written.append(path)
        if "svg" in formats:
            written.extend(_emit_charts(rows, out_dir, modes, stem))
        return written
    except OSError as exc:
        raise IoFailure(f"failed to write report: {exc}") from exc


_METRIC_LABELS = {
    "avg_delay_s": "Average delay per vehicle (s)",
    "vehicles_served": "Vehicles served",
    "total_travel_time_vh": "Total travel time (veh-h)",
}


def _emit_charts(rows, out_dir, modes, stem):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    mps = [row.mp for row in rows]
    for metric in METRICS:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for mode in modes:
            means = [row.stats[metric][mode][0] for row in rows]
            stds = [row.stats[metric][mode][1] for row in rows]
            label = "without reserved lanes" if mode == "off" else f"with reserved lanes ({mode})"
            ax.errorbar(mps, means, yerr=stds, marker="o", capsize=3, label=label)
        ax.set_xlabel("market penetration of automated vehicles")
        ax.set_ylabel(_METRIC_LABELS[metric])
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{stem}_{metric}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


# ------------------------------------------------------------ sweep files

def parse_sweep(text: str, base_dir=None) -> SweepConfig:
    sections = parse_sections(text)
    sec = next((s for s in sections if s.kind == "sweep"), None)
    if sec is None:
        from .errors import SpecParseError

        raise SpecParseError("no [sweep] section found")
    kwargs = {}
    if sec.get("testbeds"):
        kwargs["testbeds"] = tuple(sec.get("testbeds").split())
    if sec.get("los"):
        kwargs["los_levels"] = tuple(LosClass.parse(x) for x in sec.get("los").split())
    if sec.get("mp_levels"):
        kwargs["mp_levels"] = tuple(float(x) for x in sec.get("mp_levels").split())
    if sec.get("lane_modes"):
        kwargs["lane_modes"] = tuple(sec.get("lane_modes").split())
    if sec.get("seeds"):
        kwargs["seeds"] = tuple(int(x) for x in sec.get("seeds").split())
    if sec.get("out"):
        kwargs["out_dir"] = sec.get("out")
    kwargs["warmup"] = sec.get_float("warmup", 900.0)
    kwargs["duration"] = sec.get_float("duration", 3600.0)
    kwargs["dt"] = sec.get_float("dt", 0.1)
    kwargs["base_dir"] = base_dir
    return SweepConfig(**kwargs)

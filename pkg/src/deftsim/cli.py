"""Experiment orchestration and command-line entry points.

`deftsim run` executes a scheme-comparison experiment from a single JSON
config: for every scheme and sweep point it partitions the profile, plans a
schedule, simulates it, and (for the delayed-update schemes) checks the
convergence-preservation verdict. Reports land in the output directory as
summary.json, comparison.csv, per-run timelines, Chrome traces, and plot
data. `deftsim trace reconstruct` and `deftsim solve knapsack` expose the
trace-reduction and solver layers for debugging.

Exit codes: 0 success, 2 validation error, 3 infeasibility.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import click

from .errors import (
    DeftError,
    InfeasiblePartitionError,
    ReconstructionError,
    SchemaError,
    ValidationError,
)
from .knapsack import Item, greedy_multi_knapsack, naive_knapsack
from .partition import PartitionConfig
from .preserver import WalkParams, check_sequence, extract_batch_sequence
from .profiles import (
    ClusterSpec,
    LinkSpec,
    ModelProfile,
    cluster_from_dict,
    load_cluster,
    load_profile,
)
from .scheduler import SCHEMES, build_schedule
from .simulator import SimConfig, SimReport, compare, export_chrome_trace, simulate
from .trace import load_trace, reconstruct_buckets

EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3


@dataclass(frozen=True)
class SweepPoint:
    """One point of the experiment grid; the base point changes nothing."""

    bandwidth_scale: float = 1.0
    partition_size: int | None = None
    gpu_count: int | None = None

    def label(self) -> str:
        parts = []
        if self.bandwidth_scale != 1.0:
            parts.append(f"bw{self.bandwidth_scale:g}")
        if self.partition_size is not None:
            parts.append(f"ps{self.partition_size}")
        if self.gpu_count is not None:
            parts.append(f"gpu{self.gpu_count}")
        return "_".join(parts) or "base"


@dataclass(frozen=True)
class ExperimentConfig:
    profile_path: str
    cluster_path: str | None
    cluster_inline: dict | None
    schemes: tuple[str, ...]
    iterations: int
    partition: PartitionConfig
    walk: WalkParams | None
    bandwidth_scales: tuple[float, ...] = ()
    partition_sizes: tuple[int, ...] = ()
    gpu_counts: tuple[int, ...] = ()
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise SchemaError("iterations must be >= 1")
        if not self.schemes:
            raise SchemaError("schemes must be non-empty")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise SchemaError(f"unknown schemes {bad}; valid: {list(SCHEMES)}")
        if any(s <= 0 for s in self.bandwidth_scales):
            raise SchemaError("bandwidth_scale values must be > 0")
        if any(p <= 0 for p in self.partition_sizes):
            raise SchemaError("partition_size values must be > 0")
        if any(g < 2 for g in self.gpu_counts):
            raise SchemaError("gpu_counts values must be >= 2")


def experiment_config_from_dict(data: dict, base_dir: Path) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise SchemaError("experiment config must be a JSON object")
    for key in ("profile", "schemes", "iterations"):
        if key not in data:
            raise SchemaError(f"experiment config: missing field {key!r}")
    part = data.get("partition", {})
    partition = PartitionConfig(
        partition_size=int(part.get("partition_size", 6_500_000)),
        mu=float(part.get("mu", 1.0)),
        enable_fusion=bool(part.get("enable_fusion", False)),
        comm_startup_us=int(part.get("comm_startup_us", 0)),
    )
    walk = WalkParams.from_dict(data["walk"]) if "walk" in data else None
    sweeps = data.get("sweeps", {})
    for axis in ("bandwidth_scale", "partition_size", "gpu_counts"):
        if axis in sweeps and not sweeps[axis]:
            raise SchemaError(f"sweep axis {axis!r} must be non-empty when present")
    sim_raw = data.get("sim", {})
    sim = SimConfig(
        affine_links=bool(sim_raw.get("affine_links", False)),
        slow_link_copy_overhead_us=int(sim_raw.get("slow_link_copy_overhead_us", 0)),
        jitter=float(sim_raw.get("jitter", 0.0)),
    )
    cluster_path = None
    cluster_inline = None
    if "cluster" in data:
        if isinstance(data["cluster"], dict):
            cluster_inline = data["cluster"]
        else:
            cluster_path = str(base_dir / data["cluster"])
    return ExperimentConfig(
        profile_path=str(base_dir / data["profile"]),
        cluster_path=cluster_path,
        cluster_inline=cluster_inline,
        schemes=tuple(data["schemes"]),
        iterations=int(data["iterations"]),
        partition=partition,
        walk=walk,
        bandwidth_scales=tuple(float(x) for x in sweeps.get("bandwidth_scale", [])),
        partition_sizes=tuple(int(x) for x in sweeps.get("partition_size", [])),
        gpu_counts=tuple(int(x) for x in sweeps.get("gpu_counts", [])),
        sim=sim,
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    return experiment_config_from_dict(data, path.parent)


def _ring_factor(p: int) -> float:
    """Relative all-reduce volume of ring collectives on p workers."""
    return 2.0 * (p - 1) / p


def sweep_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    """The base point plus each axis varied on its own."""
    points = [SweepPoint()]
    for s in cfg.bandwidth_scales:
        if s != 1.0:
            points.append(SweepPoint(bandwidth_scale=s))
    for ps in cfg.partition_sizes:
        if ps != cfg.partition.partition_size:
            points.append(SweepPoint(partition_size=ps))
    if cfg.gpu_counts:
        ref = cfg.gpu_counts[0]
        for g in cfg.gpu_counts[1:]:
            points.append(SweepPoint(gpu_count=g))
        cfg_points = [p for p in points if p.gpu_count is None or p.gpu_count != ref]
        return cfg_points
    return points


def _point_profile(
    profile: ModelProfile, point: SweepPoint, gpu_reference: int | None
) -> ModelProfile:
    factor = 1.0 / point.bandwidth_scale
    if point.gpu_count is not None and gpu_reference:
        factor *= _ring_factor(point.gpu_count) / _ring_factor(gpu_reference)
    if factor == 1.0:
        return profile
    return profile.scaled_comm(factor, name_suffix="")


@dataclass
class RunRecord:
    scheme: str
    point: SweepPoint
    report: SimReport
    schedule_scheme: str
    verdict: dict | None

    @property
    def run_id(self) -> str:
        return f"{self.scheme}__{self.point.label()}"


@dataclass
class ReportBundle:
    config_hash: str
    runs: list[RunRecord]
    iterations: int

    def by_point(self) -> dict[str, dict[str, RunRecord]]:
        out: dict[str, dict[str, RunRecord]] = {}
        for r in self.runs:
            out.setdefault(r.point.label(), {})[r.scheme] = r
        return out


def _config_hash(cfg: ExperimentConfig, seed: int) -> str:
    blob = json.dumps(
        {
            "profile": Path(cfg.profile_path).name,
            "schemes": list(cfg.schemes),
            "iterations": cfg.iterations,
            "partition": vars(cfg.partition) | {},
            "walk": vars(cfg.walk) | {} if cfg.walk else None,
            "bandwidth_scales": list(cfg.bandwidth_scales),
            "partition_sizes": list(cfg.partition_sizes),
            "gpu_counts": list(cfg.gpu_counts),
            "seed": seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _default_cluster() -> ClusterSpec:
    return ClusterSpec(links=(LinkSpec(name="fast"),))


def run_experiment(cfg: ExperimentConfig, seed: int = 0) -> ReportBundle:
    profile = load_profile(cfg.profile_path)
    if cfg.cluster_inline is not None:
        cluster = cluster_from_dict(cfg.cluster_inline)
    elif cfg.cluster_path:
        cluster = load_cluster(cfg.cluster_path)
    else:
        cluster = _default_cluster()

    gpu_ref = cfg.gpu_counts[0] if cfg.gpu_counts else None
    sim_cfg = replace(cfg.sim, seed=seed)
    runs: list[RunRecord] = []
    for point in sweep_points(cfg):
        p_profile = _point_profile(profile, point, gpu_ref)
        p_partition = cfg.partition
        if point.partition_size is not None:
            p_partition = replace(cfg.partition, partition_size=point.partition_size)
        for scheme in cfg.schemes:
            try:
                schedule = build_schedule(
                    scheme, p_profile, cluster, p_partition, cfg.iterations
                )
                report = simulate(schedule, sim_cfg)
            except DeftError as e:
                raise type(e)(
                    f"scheme {scheme!r} at sweep point {point.label()!r}: {e}"
                ) from e
            verdict = None
            if schedule.delayed_updates and cfg.walk is not None:
                seq = extract_batch_sequence(schedule)
                preserved, ratio, merged, base = check_sequence(seq, cfg.walk)
                verdict = {
                    "preserved": preserved,
                    "ratio": round(ratio, 6),
                    "expected_state": round(merged, 9),
                    "baseline_state": round(base, 9),
                    "k_values": list(seq.k_values),
                }
            runs.append(RunRecord(
                scheme=scheme,
                point=point,
                report=report,
                schedule_scheme=schedule.scheme,
                verdict=verdict,
            ))
    return ReportBundle(
        config_hash=_config_hash(cfg, seed), runs=runs, iterations=cfg.iterations
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def emit_reports(bundle: ReportBundle, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary = {
        "config_hash": bundle.config_hash,
        "iterations": bundle.iterations,
        "runs": [
            {
                "run_id": r.run_id,
                "scheme": r.scheme,
                "sweep_point": {
                    "bandwidth_scale": r.point.bandwidth_scale,
                    "partition_size": r.point.partition_size,
                    "gpu_count": r.point.gpu_count,
                },
                "report": r.report.summary_dict(),
                "preserver": r.verdict,
            }
            for r in sorted(bundle.runs, key=lambda r: r.run_id)
        ],
    }
    spath = out / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(spath)

    if not bundle.runs:
        return written

    # comparison across schemes at every sweep point, vs wfbp when present
    comp_rows = []
    for label, by_scheme in sorted(bundle.by_point().items()):
        baseline = "wfbp" if "wfbp" in by_scheme else sorted(by_scheme)[0]
        table = compare({s: r.report for s, r in by_scheme.items()}, baseline)
        for row in table["rows"]:
            comp_rows.append([
                label, row["scheme"], row["total_time_us"],
                row["mean_iteration_time_us"], row["bubble_ratio"],
                row["updates_performed"],
                row[f"speedup_vs_{baseline}"],
            ])
    cpath = out / "comparison.csv"
    _write_csv(
        cpath,
        ["sweep_point", "scheme", "total_time_us", "mean_iteration_time_us",
         "bubble_ratio", "updates_performed", "speedup_vs_baseline"],
        comp_rows,
    )
    written.append(cpath)

    for r in bundle.runs:
        tpath = out / f"timeline_{r.run_id}.jsonl"
        r.report.dump_timeline_jsonl(tpath)
        written.append(tpath)
        chpath = out / f"chrome_trace_{r.run_id}.json"
        export_chrome_trace(r.report, chpath)
        written.append(chpath)

    plot_dir = out / "plotdata"
    plot_dir.mkdir(exist_ok=True)
    by_point = bundle.by_point()

    def speedup_rows(points: list[tuple[str, float | int]]):
        rows = []
        for label, x in points:
            by_scheme = by_point.get(label, {})
            if "wfbp" not in by_scheme:
                continue
            base = by_scheme["wfbp"].report.total_time_us
            for scheme in sorted(by_scheme):
                t = by_scheme[scheme].report.total_time_us
                rows.append([x, scheme, round(base / t, 4) if t else 0.0])
        return rows

    bw_points = [("base", 1.0)] + [
        (SweepPoint(bandwidth_scale=s).label(), s)
        for s in sorted({r.point.bandwidth_scale for r in bundle.runs} - {1.0})
    ]
    rows = speedup_rows(bw_points)
    if rows:
        p = plot_dir / "speedup_vs_bandwidth.csv"
        _write_csv(p, ["bandwidth_scale", "scheme", "speedup_vs_wfbp"], rows)
        written.append(p)

    ps_points = [
        (SweepPoint(partition_size=ps).label(), ps)
        for ps in sorted(
            {r.point.partition_size for r in bundle.runs if r.point.partition_size}
        )
    ]
    rows = speedup_rows(ps_points)
    if rows:
        p = plot_dir / "speedup_vs_partition_size.csv"
        _write_csv(p, ["partition_size", "scheme", "speedup_vs_wfbp"], rows)
        written.append(p)

    return written


# -- command line ---------------------------------------------------------


@click.group()
def main():
    """Communication-schedule planning, simulation, and analysis."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
def run_cmd(config_path, out_dir, seed):
    """Run the scheme-comparison experiment described by a config file."""
    try:
        cfg = load_experiment_config(config_path)
        bundle = run_experiment(cfg, seed=seed)
        files = emit_reports(bundle, out_dir)
    except (ValidationError, SchemaError) as e:
        click.echo(f"validation error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (InfeasiblePartitionError, ReconstructionError) as e:
        click.echo(f"infeasible: {e}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except DeftError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"wrote {len(files)} files to {out_dir}")


@main.group("trace")
def trace_group():
    """Operator-trace utilities."""


@trace_group.command("reconstruct")
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True))
@click.option("--buckets", required=True, type=int)
@click.option("--format", "fmt", default="json", type=click.Choice(["json", "csv"]),
              show_default=True)
def trace_reconstruct_cmd(trace_path, buckets, fmt):
    """Rebuild the bucket-level profile from an operator trace."""
    try:
        trace = load_trace(trace_path)
        profile = reconstruct_buckets(trace, buckets)
    except (ValidationError, SchemaError) as e:
        click.echo(f"validation error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    except ReconstructionError as e:
        click.echo(f"reconstruction failed: {e}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    if fmt == "json":
        from .profiles import profile_to_dict

        click.echo(json.dumps(profile_to_dict(profile), indent=2, sort_keys=True))
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["id", "param_count", "forward_us", "backward_us", "comm_fast_us"])
        for b in profile.buckets:
            w.writerow([b.id, b.param_count, b.forward_us, b.backward_us,
                        b.comm_fast_us])
        click.echo(buf.getvalue().rstrip("\n"))


@main.group("solve")
def solve_group():
    """Debug access to the solvers."""


@solve_group.command("knapsack")
@click.option("--items", required=True,
              help="comma-separated item weights, e.g. 10,20,15")
@click.option("--capacities", required=True,
              help="comma-separated knapsack capacities, e.g. 30,25")
@click.option("--format", "fmt", default="json", type=click.Choice(["json", "csv"]),
              show_default=True)
def solve_knapsack_cmd(items, capacities, fmt):
    """Pack weighted items into capacitated knapsacks."""
    try:
        weights = [int(x) for x in items.split(",") if x.strip()]
        caps = [int(x) for x in capacities.split(",") if x.strip()]
        if not weights or not caps:
            raise ValueError("empty items or capacities")
        objs = [Item(bucket_id=i + 1, weight=w) for i, w in enumerate(weights)]
        if len(caps) == 1:
            asn = naive_knapsack(objs, caps[0])
        else:
            asn = greedy_multi_knapsack(objs, caps)
    except (ValueError, DeftError) as e:
        click.echo(f"validation error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    if fmt == "json":
        click.echo(json.dumps({
            "selections": [list(s) for s in asn.selections],
            "total_value": asn.total_value,
            "leftovers": list(asn.leftovers),
        }, sort_keys=True))
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["knapsack", "item_ids", "load"])
        by_id = {o.bucket_id: o.weight for o in objs}
        for k, sel in enumerate(asn.selections):
            w.writerow([k, " ".join(map(str, sel)), sum(by_id[i] for i in sel)])
        w.writerow(["leftover", " ".join(map(str, asn.leftovers)), ""])
        click.echo(buf.getvalue().rstrip("\n"))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Run the bundled VGG-19 scheduling comparison and print a summary table.

Runs all five schemes (wfbp, priority, nonsequential, deft, deft_single_link)
over the base cluster plus the bandwidth and partition-size sweeps defined in
fixtures/experiment_vgg.json, writes the full report bundle (summary.json,
comparison.csv, timelines, chrome traces, plot data) to the output directory,
and prints per-scheme totals and speedups for the base point.

Usage:
    python scripts/run_vgg_comparison.py [--out results/vgg] [--seed 0]
"""
import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from deftsim.cli import emit_reports, load_experiment_config, run_experiment  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path,
                    default=ROOT / "fixtures" / "experiment_vgg.json")
    ap.add_argument("--out", type=Path, default=ROOT / "results" / "vgg")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_experiment_config(args.config)
    bundle = run_experiment(cfg, seed=args.seed)
    files = emit_reports(bundle, args.out)

    base = {r.scheme: r for r in bundle.runs if r.point.label() == "base"}
    wfbp_total = base["wfbp"].report.total_time_us
    print(f"{'scheme':<18}{'total_us':>12}{'updates':>9}{'bubble':>8}"
          f"{'speedup':>9}  preserved")
    for scheme in cfg.schemes:
        r = base[scheme]
        rep = r.report
        preserved = "-" if r.verdict is None else str(r.verdict["preserved"])
        print(f"{scheme:<18}{rep.total_time_us:>12}"
              f"{rep.updates_performed:>9}{rep.bubble_ratio:>8.3f}"
              f"{wfbp_total / rep.total_time_us:>9.3f}  {preserved}")
    print(f"\nwrote {len(files)} files under {args.out}")


if __name__ == "__main__":
    main()

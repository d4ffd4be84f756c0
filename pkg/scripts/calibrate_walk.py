#!/usr/bin/env python3
"""Fit the random-walk drift and noise scale to a target trajectory.

Given a starting state, a 4-step per-iteration endpoint, and a target
endpoint ratio against the merged {2,1,1} update pattern, solves for
(eta*mu_t, eta*sigma_t) with a 2-equation root find. The values frozen in
fixtures/walk_merged_updates.json were produced by this script.

Usage:
    python scripts/calibrate_walk.py [--s0 0.2103] [--endpoint 0.1922]
        [--ratio 0.993] [--batch 256]
"""
import argparse
import json
import math
import sys
from pathlib import Path

from scipy.optimize import fsolve

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from deftsim import BatchSequence, WalkParams, sequence_expected_state  # noqa: E402


def solve(s0: float, endpoint: float, ratio: float, batch: int, eta: float):
    def params(drift, scale):
        return WalkParams(s0=s0, s_star=0.0, eta=eta, mu_t=drift / eta,
                          sigma_t=scale / eta)

    def per_iteration_end(drift, scale):
        seq = BatchSequence(k_values=(1, 1, 1, 1), base_batch_size=batch)
        return sequence_expected_state(seq, params(drift, scale))

    def merged_end(drift, scale):
        seq = BatchSequence(k_values=(2, 1, 1), base_batch_size=batch)
        return sequence_expected_state(seq, params(drift, scale))

    def residuals(x):
        drift, scale = x
        e_base = per_iteration_end(drift, scale)
        e_merged = merged_end(drift, scale)
        return [e_base - endpoint, e_base / e_merged - ratio]

    guess = [(s0 - endpoint) / 4, (s0 - endpoint) * 100]
    (drift, scale), info, ier, msg = fsolve(residuals, guess, full_output=True)
    if ier != 1:
        raise SystemExit(f"calibration did not converge: {msg}")
    return params(drift, scale)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--s0", type=float, default=0.2103)
    ap.add_argument("--endpoint", type=float, default=0.1922,
                    help="state after 4 per-iteration updates")
    ap.add_argument("--ratio", type=float, default=0.993,
                    help="per-iteration endpoint over merged {2,1,1} endpoint")
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--eta", type=float, default=0.01)
    args = ap.parse_args()

    p = solve(args.s0, args.endpoint, args.ratio, args.batch, args.eta)

    traj = [args.s0]
    s = args.s0
    from deftsim import expected_next_state

    for _ in range(4):
        s = expected_next_state(s, args.batch, p)
        traj.append(s)
    print("per-iteration trajectory:",
          " -> ".join(f"{x:.4f}" for x in traj))
    merged = sequence_expected_state(
        BatchSequence(k_values=(2, 1, 1), base_batch_size=args.batch), p)
    print(f"merged {{2,1,1}} endpoint: {merged:.4f}  "
          f"ratio: {traj[-1] / merged:.4f}")
    print(json.dumps({
        "s0": p.s0, "s_star": p.s_star, "eta": p.eta,
        "mu_t": p.mu_t, "sigma_t": p.sigma_t, "epsilon": p.epsilon,
    }, indent=2))


if __name__ == "__main__":
    main()

"""Planted-exclusion recovery sweep.

    python scripts/synth_bench.py                # acceptance grid, B in {10, 15}
    python scripts/synth_bench.py --full --jobs 4  # full alpha/lambda/B grid
"""
import argparse
from pathlib import Path

from overrule.synth import DEFAULT_GRID, summarize, synth_bench

ACCEPTANCE_GRID = {
    "alpha": (0.97, 0.98, 0.99),
    "lambda0": (0.0, 1e-6, 1e-4),
    "lambda1": (1e-6, 1e-4),
    "beam_width": (10, 15),
    "seed": (0, 1, 2),
}

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--full", action="store_true", help="use the full default grid")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--output", default="results/synth")
    args = ap.parse_args()

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    bench = synth_bench(DEFAULT_GRID if args.full else ACCEPTANCE_GRID, jobs=args.jobs)
    bench.to_csv(out / "bench.csv", index=False)
    summarize(bench).to_csv(out / "summary.csv", index=False)
    print(bench.groupby("beam_width")[["recovered", "in_lp", "n_rules", "n_perfect", "seconds"]].mean().round(3))

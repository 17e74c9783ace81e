#!/usr/bin/env python3
"""Gaussian MAB runs for K in {10, 20, 30}: result CSVs plus per-task summaries."""
import argparse
from pathlib import Path

from metasrm.config import build_config
from metasrm.harness import run_experiment, summarize
from metasrm.presets import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/gaussian-mab")
    ap.add_argument("--arms", type=int, nargs="+", default=[10, 20, 30])
    ap.add_argument("--replications", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in args.arms:
        values = dict(preset("gaussian-mab-fig2"), K=str(k), replications=str(args.replications),
                      seed=str(args.seed), workers=str(args.workers))
        path = run_experiment(build_config(values), out / f"K{k}.csv")
        summarize(path, out / f"K{k}-summary.csv")
        print(f"K={k}: {path}")


if __name__ == "__main__":
    main()

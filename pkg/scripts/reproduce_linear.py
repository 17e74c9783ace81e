#!/usr/bin/env python3
"""Linear Gaussian bandit runs with K = 5d sphere arms over a sweep of d."""
import argparse
from pathlib import Path

from metasrm.config import build_config
from metasrm.harness import run_experiment, summarize
from metasrm.presets import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/linear")
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--arms-per-dim", type=int, default=5, help="5 for the main runs, 10 for the wider variant")
    ap.add_argument("--replications", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for d in args.dims:
        k = args.arms_per_dim * d
        values = dict(preset("linear-fig3"), d=str(d), K=str(k), replications=str(args.replications),
                      seed=str(args.seed), workers=str(args.workers))
        path = run_experiment(build_config(values), out / f"d{d}-K{k}.csv")
        summarize(path, out / f"d{d}-K{k}-summary.csv")
        print(f"d={d}, K={k}: {path}")


if __name__ == "__main__":
    main()

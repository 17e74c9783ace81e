#!/usr/bin/env python3
"""Per-agent average regret over a task window, with standard errors across replications."""
import argparse
import math

from metasrm.harness import read_results


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results")
    ap.add_argument("--first", type=int, default=151)
    ap.add_argument("--last", type=int, default=200)
    ap.add_argument("--column", default="expected", choices=("expected", "realized", "cumulative"))
    args = ap.parse_args()
    ledger = read_results(args.results)
    print(f"{'agent':24s} {'mean':>10s} {'stderr':>10s}")
    for agent in ledger.agents():
        tasks, vals = ledger.matrix(agent, args.column)
        per_rep = vals[:, (tasks >= args.first) & (tasks <= args.last)].mean(axis=1)
        se = per_rep.std(ddof=1) / math.sqrt(per_rep.size) if per_rep.size > 1 else 0.0
        print(f"{agent:24s} {per_rep.mean():10.5f} {se:10.5f}")


if __name__ == "__main__":
    main()

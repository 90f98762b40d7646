"""Search network shapes with the surrogate evaluator, then deploy the front.

gen-data -> train -> search -> optimize, through the CLI, into --out-dir.
"""

import argparse
import csv
import sys
from pathlib import Path

from hlsdeploy.cli import main as cli


def run(*argv):
    rc = cli([str(a) for a in argv])
    if rc:
        sys.exit(rc)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="results/pipeline")
    p.add_argument("--trees", type=int, default=30)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    out = Path(args.out_dir)

    run("gen-data", "--out-dir", out, "--seed", args.seed, "--quiet")
    run("train", "--data", out / "observations.csv", "--trees", args.trees,
        "--out-dir", out, "--seed", args.seed, "--quiet")
    run("search", "--trials", args.trials, "--models", out / "models",
        "--out-dir", out, "--seed", args.seed, "--quiet")

    with open(out / "front.csv", newline="") as fh:
        front = list(csv.DictReader(fh))
    print(f"{'trial':>5s} {'obj1':>7s} {'workload':>10s} {'LUTs':>8s} {'DSPs':>6s} "
          f"{'lat us':>7s} feasible  layers")
    for r in front:
        print(f"{r['trial_id']:>5s} {r['obj1']:>7s} {r['workload']:>10s} {r['luts']:>8s} "
              f"{r['dsps']:>6s} {r['latency_us']:>7s} {r['feasible']:8s}  {r['layers']}")


if __name__ == "__main__":
    main()

"""Exact reuse-factor solver against stochastic search and simulated annealing.

Trains models on the synthetic corpus unless --models points at a trained
set, then runs the trial ladder on each network and writes one CSV per
network into --out-dir.
"""

import argparse
import time
from pathlib import Path

from hlsdeploy.cli import write_csv
from hlsdeploy.costmodel import TARGETS, ModelSet, gen_synthetic, train
from hlsdeploy.deploy import COMPARE_COLUMNS, LatencyBudget, build_candidates, compare
from hlsdeploy.forest import ForestConfig
from hlsdeploy.layers import NetworkSpec

HERE = Path(__file__).parent


def get_models(args) -> ModelSet:
    if args.models:
        return ModelSet.load(args.models)
    data = gen_synthetic(seed=args.seed)
    models = ModelSet()
    cfg = ForestConfig(n_trees=args.trees, seed=args.seed)
    for kind in data.kinds():
        for target in TARGETS:
            models[(kind, target)] = train(data, kind, target, cfg)
    return models


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--networks", nargs="+",
                   default=[str(HERE / "networks/model1.json"), str(HERE / "networks/model2.json")])
    p.add_argument("--models", help="trained model directory (default: train here)")
    p.add_argument("--trees", type=int, default=30)
    p.add_argument("--trials", default="1000,10000,100000,1000000")
    p.add_argument("--seeds", default="0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="results")
    args = p.parse_args()

    t0 = time.perf_counter()
    models = get_models(args)
    print(f"models ready in {time.perf_counter() - t0:.1f} s")
    ladder = [int(x) for x in args.trials.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    budget = LatencyBudget()
    for path in args.networks:
        net = NetworkSpec.load(path)
        table = build_candidates(net, models)
        rows = compare(table, budget, trial_ladder=ladder, seeds=seeds)
        out = Path(args.out_dir) / f"compare_{Path(path).stem}.csv"
        write_csv(out, COMPARE_COLUMNS, [r.__dict__ for r in rows])
        print(f"\n{Path(path).stem}: {len(net.layers)} layers, "
              f"{table.n_combinations:.2e} reuse-factor combinations -> {out}")
        print(f"{'method':11s} {'trials':>8s} {'LUTs':>9s} {'DSPs':>7s} {'lat us':>7s} {'time s':>8s}")
        for r in rows:
            print(f"{r.method:11s} {r.trials or '':>8} {r.luts:9.0f} {r.dsps:7.0f} "
                  f"{r.latency_us:7.1f} {r.search_time_s:8.3f}")


if __name__ == "__main__":
    main()

"""Command-line entry point: gen-data, train, optimize, search, compare."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .costmodel import (
    TARGETS,
    IngestError,
    MissingModelError,
    ModelFormatError,
    ModelSet,
    SweepSpec,
    atomic_write_text,
    evaluate,
    gen_synthetic,
    read_csv,
    train,
)
from .deploy import (
    COMPARE_COLUMNS,
    InfeasibleError,
    LatencyBudget,
    build_candidates,
    compare,
    solve_exact,
    solve_sa,
    solve_stochastic,
)
from .forest import ForestConfig
from .layers import NetworkSpec
from .nas import SearchSpace, export_front, make_evaluator, run_search

log = logging.getLogger("hlsdeploy")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_MISSING_MODEL = 4

METRICS_COLUMNS = ("layer", "metric", "r2", "mape_pct", "rmse_pct", "range_min",
                   "range_max", "mape_excluded", "n_train", "n_test")
FRONT_COLUMNS = ("trial_id", "obj1", "workload", "input_length", "input_channels", "layers",
                 "luts", "ffs", "brams", "dsps", "latency_cycles", "latency_us",
                 "feasible", "reuse_factors", "network")


def fmt(value) -> str:
    """CSV cell: floats at 4 significant digits, everything else verbatim."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.4g}"
    if isinstance(value, (tuple, list)):
        return " ".join(str(v) for v in value)
    return str(value)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    atomic_write_text(path, buf.getvalue())


def write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file {p} does not exist")
    return p


def _weights(text: str) -> tuple[float, ...]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4 or any(w < 0 for w in parts):
        raise argparse.ArgumentTypeError("weights are four non-negative numbers: lut,ff,bram,dsp")
    return tuple(parts)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x.replace("_", "")) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _budget(args) -> LatencyBudget:
    return LatencyBudget(args.budget_cycles, args.clock_mhz)


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, resolved config)

def cmd_gen_data(args):
    if args.sweep:
        sweep = SweepSpec.from_dict(json.loads(_require_file(args.sweep).read_text()))
    elif args.coarse_grid:
        sweep = SweepSpec.coarse_grid()
    else:
        sweep = SweepSpec()
    data = gen_synthetic(sweep, args.noise_pct, args.seed)
    out = Path(args.out_dir) / args.output
    atomic_write_text(out, data.to_csv())
    log.info("wrote %d observations (%s) from %d synthesis runs to %s",
             len(data), data.counts(), data.n_rows, out)
    return [out], {"sweep": sweep.to_dict(), "noise_pct": args.noise_pct,
                   "counts": data.counts(), "n_runs": data.n_rows}


def cmd_train(args):
    data = read_csv(_require_file(args.data))
    config = ForestConfig(n_trees=args.trees, max_depth=args.max_depth,
                          min_leaf=args.min_leaf, seed=args.seed)
    train_set, test_set = data.split(args.split, args.seed)
    model_dir = Path(args.models) if args.models else Path(args.out_dir) / "models"
    models = ModelSet()
    rows = []
    for kind in data.kinds():
        n_train = len(train_set.of_kind(kind))
        n_test = len(test_set.of_kind(kind))
        for target in TARGETS:
            model = train(train_set, kind, target, config, n_jobs=args.jobs)
            models[(kind, target)] = model
            row = {"layer": kind.value, "metric": target, "n_train": n_train, "n_test": n_test}
            try:
                m = evaluate(model, test_set)
                row.update(r2=m.r2, mape_pct=m.mape_pct, rmse_pct=m.rmse_pct,
                           range_min=m.value_range[0], range_max=m.value_range[1],
                           mape_excluded=m.mape_excluded)
            except ValueError as exc:
                log.warning("%s/%s: %s", kind.value, target, exc)
            rows.append(row)
            log.info("%s/%s r2=%s", kind.value, target, fmt(row.get("r2")))
    paths = models.save(model_dir)
    metrics = Path(args.out_dir) / "metrics.csv"
    write_csv(metrics, METRICS_COLUMNS, rows)
    return paths + [metrics], {"forest": config.to_dict(), "split": args.split,
                               "models": str(model_dir), "counts": data.counts()}


SOLVERS = ("exact", "sa", "stochastic")


def _solve(table, budget, args):
    if args.solver == "exact":
        return solve_exact(table, budget, args.weights)
    if args.solver == "sa":
        return solve_sa(table, budget, args.weights, trials=args.trials, seed=args.seed)
    return solve_stochastic(table, budget, args.weights, trials=args.trials, seed=args.seed)


def cmd_optimize(args):
    net = NetworkSpec.load(_require_file(args.network))
    models = ModelSet.load(args.models)
    budget = _budget(args)
    table = build_candidates(net, models)
    a = _solve(table, budget, args)
    doc = a.to_dict(budget)
    doc["layers"] = [
        {"index": i, "kind": layer.kind.value, "size": layer.size, "reuse_factor": r,
         "predicted": v.to_dict(), "latency_us": budget.to_us(v.latency_cycles)}
        for i, (layer, r, v) in enumerate(zip(net.layers, a.reuse_factors, a.per_layer))
    ]
    out = Path(args.output) if args.output else Path(args.out_dir) / "assignment.json"
    write_json(out, doc)
    if not args.quiet:
        print(json.dumps({"reuse_factors": list(a.reuse_factors), "feasible": a.feasible,
                          "latency_cycles": a.total.latency_cycles,
                          "scalar_cost": a.scalar_cost}))
    cfg = {"solver": args.solver, "trials": args.trials, "weights": list(args.weights),
           "budget_cycles": budget.cycles, "clock_mhz": budget.clock_mhz}
    if not a.feasible:
        raise InfeasibleError(a.min_latency, budget.cycles)
    return [out], cfg


def cmd_search(args):
    space = SearchSpace.load(_require_file(args.space)) if args.space else SearchSpace()
    evaluator = make_evaluator(args.evaluator)
    archive, trials = run_search(space, evaluator, args.trials, args.seed)
    models = ModelSet.load(args.models) if args.models else None
    budget = _budget(args)
    rows = export_front(archive, models, budget, args.weights)
    out_dir = Path(args.out_dir)
    front = out_dir / "front.csv"
    log_path = out_dir / "trials.jsonl"
    write_csv(front, FRONT_COLUMNS, rows)
    atomic_write_text(log_path, "".join(t.to_json() + "\n" for t in trials))
    failed = sum(t.status != "ok" for t in trials)
    log.info("%d trials (%d failed), %d on the front", len(trials), failed, len(archive))
    return [front, log_path], {"space": space.to_dict(), "evaluator": args.evaluator,
                               "trials": args.trials, "failed": failed,
                               "deployed": models is not None}


def cmd_compare(args):
    net = NetworkSpec.load(_require_file(args.network))
    models = ModelSet.load(args.models)
    budget = _budget(args)
    table = build_candidates(net, models)
    rows = compare(table, budget, args.weights, args.trials, args.seeds)
    out = Path(args.out_dir) / args.output
    write_csv(out, COMPARE_COLUMNS, [r.__dict__ for r in rows])
    if not args.quiet:
        sys.stdout.write(out.read_text())
    return [out], {"trial_ladder": args.trials, "seeds": args.seeds,
                   "weights": list(args.weights), "budget_cycles": budget.cycles,
                   "clock_mhz": budget.clock_mhz,
                   "combinations": table.n_combinations}


# ---------------------------------------------------------------------------

def _add_budget(p):
    p.add_argument("--budget-cycles", type=int, default=50_000)
    p.add_argument("--clock-mhz", type=float, default=250.0)
    p.add_argument("--weights", type=_weights, default=(1.0, 1.0, 1.0, 1.0),
                   help="lut,ff,bram,dsp objective weights")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="hlsdeploy", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic observation CSV")
    p.add_argument("--sweep", help="JSON sweep definition")
    p.add_argument("--coarse-grid", action="store_true", help="use the coarse 3-length grid")
    p.add_argument("--noise-pct", type=float, default=5.0)
    p.add_argument("--output", default="observations.csv")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train cost/latency forests")
    p.add_argument("--data", required=True, help="observation CSV")
    p.add_argument("--models", help="model directory (default OUT_DIR/models)")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", parents=[common], help="assign reuse factors to a network")
    p.add_argument("--network", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--solver", choices=SOLVERS, default="exact")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--output", help="assignment JSON (default OUT_DIR/assignment.json)")
    _add_budget(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("search", parents=[common], help="Pareto search over network shapes")
    p.add_argument("--space", help="JSON search space (default: built-in)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--evaluator", default="surrogate", help="'surrogate' or 'cmd:<command>'")
    p.add_argument("--models", help="deploy every front member with these models")
    _add_budget(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("compare", parents=[common], help="exact solver vs random baselines")
    p.add_argument("--network", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--trials", type=_int_list, default=[1_000, 10_000, 100_000, 1_000_000],
                   help="comma-separated trial ladder")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--output", default="compare.csv")
    _add_budget(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _manifest(args, outputs, config, started: float, status: str) -> None:
    resolved = {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in vars(args).items() if k != "func"}
    doc = {
        "tool": "hlsdeploy", "version": __version__, "command": args.command,
        "status": status, "argv": sys.argv[1:], "args": resolved, "config": config,
        "outputs": [str(p) for p in outputs],
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "elapsed_s": time.time() - started,
    }
    write_json(Path(args.out_dir) / f"manifest_{args.command.replace('-', '_')}.json", doc)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        outputs, config = args.func(args)
    except InfeasibleError as exc:
        _manifest(args, [], {}, started, "infeasible")
        print(f"hlsdeploy {args.command}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MissingModelError as exc:
        print(f"hlsdeploy {args.command}: missing model: {exc}", file=sys.stderr)
        return EXIT_MISSING_MODEL
    except (IngestError, ModelFormatError, json.JSONDecodeError, KeyError, ValueError,
            FileNotFoundError) as exc:
        print(f"hlsdeploy {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:  # last-resort one-line diagnostic
        print(f"hlsdeploy {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _manifest(args, outputs, config, started, "ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Reuse-factor assignment under an end-to-end latency ceiling.

Choosing one reuse factor per layer to minimize summed resource cost subject
to summed latency <= budget is a multiple-choice knapsack.  ``solve_exact``
solves it with a dynamic program over integer latency (branch and bound for
very large budgets); ``solve_stochastic`` and ``solve_sa`` are the random
search and simulated annealing baselines it is compared against.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costmodel import RESOURCES, ModelSet, feature_vector
from .layers import LayerKind, NetworkSpec, infer_geometry, valid_reuse_factors

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 1.0)
DP_MAX_BUDGET = 1_000_000


class InfeasibleError(RuntimeError):
    def __init__(self, min_latency: int, budget: int):
        super().__init__(f"minimum achievable latency {min_latency} cycles exceeds "
                         f"the budget of {budget} cycles")
        self.min_latency = min_latency
        self.budget = budget


@dataclass(frozen=True)
class CostVector:
    lut: float = 0.0
    ff: float = 0.0
    bram: float = 0.0
    dsp: float = 0.0
    latency_cycles: float = 0.0

    def __add__(self, other: "CostVector") -> "CostVector":
        return CostVector(self.lut + other.lut, self.ff + other.ff, self.bram + other.bram,
                          self.dsp + other.dsp, self.latency_cycles + other.latency_cycles)

    @property
    def resources(self) -> tuple[float, float, float, float]:
        return (self.lut, self.ff, self.bram, self.dsp)

    def scalar(self, weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
        return float(sum(w * r for w, r in zip(weights, self.resources)))

    def to_dict(self) -> dict:
        return {"lut": self.lut, "ff": self.ff, "bram": self.bram, "dsp": self.dsp,
                "latency_cycles": self.latency_cycles}


@dataclass(frozen=True)
class LatencyBudget:
    cycles: int = 50_000
    clock_mhz: float = 250.0

    def __post_init__(self):
        if int(self.cycles) != self.cycles or self.cycles < 1:
            raise ValueError("budget cycles must be a positive integer")
        if not self.clock_mhz > 0:
            raise ValueError("clock_mhz must be positive")
        object.__setattr__(self, "cycles", int(self.cycles))

    def to_us(self, cycles: float) -> float:
        return cycles / self.clock_mhz

    @property
    def micros(self) -> float:
        return self.to_us(self.cycles)


@dataclass(frozen=True)
class LayerCandidates:
    """Every valid reuse factor of one layer with its predicted costs."""

    reuse_factors: np.ndarray  # ascending ints
    resources: np.ndarray      # (m, 4): lut, ff, bram, dsp
    latency: np.ndarray        # (m,) integer cycles
    kind: LayerKind | None = None

    def __post_init__(self):
        rf = np.asarray(self.reuse_factors, dtype=np.int64)
        res = np.asarray(self.resources, dtype=np.float64).reshape(len(rf), 4)
        lat = np.asarray(self.latency)
        if len(rf) == 0:
            raise ValueError("layer has no candidates")
        if np.any(np.diff(rf) <= 0):
            raise ValueError("reuse factors must be strictly ascending")
        if len(lat) != len(rf):
            raise ValueError("one latency per candidate required")
        if np.any(lat != np.round(lat)) or np.any(lat < 0):
            raise ValueError("candidate latencies must be non-negative integers")
        if np.any(res < 0) or not np.all(np.isfinite(res)):
            raise ValueError("candidate resources must be finite and >= 0")
        object.__setattr__(self, "reuse_factors", rf)
        object.__setattr__(self, "resources", res)
        object.__setattr__(self, "latency", lat.astype(np.int64))

    def __len__(self):
        return len(self.reuse_factors)

    def vector(self, j: int) -> CostVector:
        lut, ff, bram, dsp = (float(v) for v in self.resources[j])
        return CostVector(lut, ff, bram, dsp, float(self.latency[j]))

    def cost(self, weights: Sequence[float] = DEFAULT_WEIGHTS) -> np.ndarray:
        return self.resources @ np.asarray(weights, dtype=np.float64)


@dataclass(frozen=True)
class CandidateTable:
    layers: tuple[LayerCandidates, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("candidate table has no layers")

    def __len__(self):
        return len(self.layers)

    @property
    def n_combinations(self) -> int:
        return math.prod(len(c) for c in self.layers)

    @classmethod
    def from_lists(cls, layers) -> "CandidateTable":
        """Build from ``[[(reuse_factor, cost_or_resources, latency), ...], ...]``.

        A scalar cost is stored as LUTs, so unit weights reproduce it.
        """
        out = []
        for cands in layers:
            cands = sorted(cands, key=lambda c: c[0])
            res = [c[1] if np.ndim(c[1]) else (c[1], 0.0, 0.0, 0.0) for c in cands]
            out.append(LayerCandidates([c[0] for c in cands], res, [c[2] for c in cands]))
        return cls(tuple(out))

    def assignment(self, choice: Sequence[int], budget: LatencyBudget,
                   weights: Sequence[float] = DEFAULT_WEIGHTS) -> "Assignment":
        per_layer = tuple(layer.vector(j) for layer, j in zip(self.layers, choice))
        total = CostVector()
        for v in per_layer:
            total = total + v
        return Assignment(
            reuse_factors=tuple(int(layer.reuse_factors[j]) for layer, j in zip(self.layers, choice)),
            choice=tuple(int(j) for j in choice),
            per_layer=per_layer,
            total=total,
            feasible=total.latency_cycles <= budget.cycles,
            scalar_cost=total.scalar(weights),
        )

    def min_latency(self) -> int:
        return int(sum(int(c.latency.min()) for c in self.layers))


@dataclass(frozen=True)
class Assignment:
    reuse_factors: tuple[int, ...]
    choice: tuple[int, ...]
    per_layer: tuple[CostVector, ...]
    total: CostVector
    feasible: bool
    scalar_cost: float
    method: str = ""
    trials: int | None = None
    wall_time: float = 0.0
    min_latency: int | None = None  # set on infeasible verdicts

    @property
    def objective(self) -> float:
        """Scalar cost, or +inf when the assignment breaks the budget."""
        return self.scalar_cost if self.feasible else math.inf

    def to_dict(self, budget: LatencyBudget | None = None) -> dict:
        d = {
            "method": self.method,
            "reuse_factors": list(self.reuse_factors),
            "per_layer": [v.to_dict() for v in self.per_layer],
            "total": self.total.to_dict(),
            "scalar_cost": self.scalar_cost,
            "feasible": self.feasible,
            "trials": self.trials,
            "wall_time": self.wall_time,
        }
        if budget is not None:
            d["latency_us"] = budget.to_us(self.total.latency_cycles)
            d["budget"] = {"cycles": budget.cycles, "clock_mhz": budget.clock_mhz,
                           "us": budget.micros}
        if self.min_latency is not None:
            d["min_latency_cycles"] = self.min_latency
        return d


def _replace(a: Assignment, **kw) -> Assignment:
    d = {f: getattr(a, f) for f in a.__dataclass_fields__}
    d.update(kw)
    return Assignment(**d)


def build_candidates(net: NetworkSpec, models: ModelSet) -> CandidateTable:
    """Predict the cost vector of every valid reuse factor of every layer."""
    geoms = infer_geometry(net)
    models.require({g.kind for g in geoms})
    layers = []
    for geom in geoms:
        rfs = valid_reuse_factors(geom)
        X = np.array([feature_vector(geom, r) for r in rfs], dtype=np.float64)
        res = np.column_stack([np.asarray(models[(geom.kind, t)].predict(X), dtype=np.float64)
                               for t in RESOURCES])
        lat = np.asarray(models[(geom.kind, "latency")].predict(X), dtype=np.float64)
        # ceiling keeps the integer budget check conservative
        lat = np.ceil(np.maximum(lat, 0.0) - 1e-9).astype(np.int64)
        layers.append(LayerCandidates(rfs, np.maximum(res, 0.0), lat, geom.kind))
    return CandidateTable(tuple(layers))


# ---------------------------------------------------------------------------
# exact solver

def prune_dominated(latency: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Indices of candidates that may appear in a tie-broken optimum.

    Candidate j is dropped when some i has latency <= and strictly lower cost,
    or equal cost with a smaller reuse factor (candidates are ascending, so a
    smaller index).
    """
    lat_le = latency[:, None] <= latency[None, :]
    better = cost[:, None] < cost[None, :]
    idx = np.arange(len(cost))
    tie_earlier = (cost[:, None] == cost[None, :]) & (idx[:, None] < idx[None, :])
    dominated = np.any(lat_le & (better | tie_earlier), axis=0)
    return np.flatnonzero(~dominated)


def _infeasible(table: CandidateTable, budget: LatencyBudget, weights) -> Assignment:
    choice = []
    for layer in table.layers:
        cost = layer.cost(weights)
        # min latency, then min cost, then smallest reuse factor
        j = min(range(len(layer)), key=lambda i: (layer.latency[i], cost[i], i))
        choice.append(j)
    a = table.assignment(choice, budget, weights)
    return _replace(a, min_latency=table.min_latency())


def _solve_dp(table: CandidateTable, budget: int, weights) -> list[int]:
    B = budget
    kept = []
    for layer in table.layers:
        cost = layer.cost(weights)
        ok = np.flatnonzero(layer.latency <= B)
        keep = ok[prune_dominated(layer.latency[ok], cost[ok])]
        kept.append((keep, layer.latency[keep], cost[keep]))

    # best[k][t]: min cost of layers k.. with at most t cycles left
    best = [None] * (len(kept) + 1)
    best[-1] = np.zeros(B + 1)
    for k in range(len(kept) - 1, -1, -1):
        _, lat, cost = kept[k]
        nxt = best[k + 1]
        cur = np.full(B + 1, np.inf)
        for l, c in zip(lat.tolist(), cost.tolist()):
            np.minimum(cur[l:], c + nxt[: B + 1 - l], out=cur[l:])
        best[k] = cur

    choice, t = [], B
    for k, (keep, lat, cost) in enumerate(kept):
        target = best[k][t]
        nxt = best[k + 1]
        for j, l, c in zip(keep.tolist(), lat.tolist(), cost.tolist()):  # ascending R
            if l <= t and c + nxt[t - l] == target:
                choice.append(j)
                t -= l
                break
        else:  # pragma: no cover - the DP recurrence guarantees a match
            raise AssertionError("DP reconstruction failed")
    return choice


def _solve_bnb(table: CandidateTable, budget: int, weights) -> list[int]:
    layers = []
    for layer in table.layers:
        cost = layer.cost(weights)
        ok = np.flatnonzero(layer.latency <= budget)
        keep = ok[prune_dominated(layer.latency[ok], cost[ok])]
        order = sorted(keep.tolist(), key=lambda j: (cost[j], j))
        layers.append([(j, int(layer.latency[j]), float(cost[j])) for j in order])
    n = len(layers)
    min_cost = [min(c for _, _, c in cands) for cands in layers]
    min_lat = [min(l for _, l, _ in cands) for cands in layers]
    rest_cost = [0.0] * (n + 1)
    rest_lat = [0] * (n + 1)
    for k in range(n - 1, -1, -1):
        rest_cost[k] = rest_cost[k + 1] + min_cost[k]
        rest_lat[k] = rest_lat[k + 1] + min_lat[k]

    best_cost = math.inf
    best_choice: list[int] | None = None
    rf = [layer.reuse_factors for layer in table.layers]
    path: list[int] = []

    def key(choice):
        return [int(rf[k][j]) for k, j in enumerate(choice)]

    def dfs(k: int, lat: int, cost: float):
        nonlocal best_cost, best_choice
        if k == n:
            if cost < best_cost or (cost == best_cost and key(path) < key(best_choice)):
                best_cost, best_choice = cost, list(path)
            return
        for j, l, c in layers[k]:
            if lat + l + rest_lat[k + 1] > budget:
                continue
            if cost + c + rest_cost[k + 1] > best_cost:
                break  # candidates are cost-sorted
            path.append(j)
            dfs(k + 1, lat + l, cost + c)
            path.pop()

    dfs(0, 0, 0.0)
    assert best_choice is not None
    return best_choice


def solve_exact(table: CandidateTable, budget: LatencyBudget | None = None,
                weights: Sequence[float] = DEFAULT_WEIGHTS, method: str = "auto") -> Assignment:
    """Provably optimal assignment, or an infeasible verdict.

    Among equal-cost optima the lexicographically smallest reuse-factor
    vector is returned.  ``method`` is ``"dp"``, ``"bnb"`` or ``"auto"`` (DP
    unless the budget exceeds ``DP_MAX_BUDGET`` cycles).
    """
    budget = budget or LatencyBudget()
    start = time.perf_counter()
    if table.min_latency() > budget.cycles:
        a = _infeasible(table, budget, weights)
        return _replace(a, method="exact", wall_time=time.perf_counter() - start)
    if method == "auto":
        method = "dp" if budget.cycles <= DP_MAX_BUDGET else "bnb"
    if method == "dp":
        choice = _solve_dp(table, budget.cycles, weights)
    elif method == "bnb":
        choice = _solve_bnb(table, budget.cycles, weights)
    else:
        raise ValueError(f"unknown exact method {method!r}")
    a = table.assignment(choice, budget, weights)
    return _replace(a, method="exact", wall_time=time.perf_counter() - start)


def brute_force(table: CandidateTable, budget: LatencyBudget | None = None,
                weights: Sequence[float] = DEFAULT_WEIGHTS) -> Assignment | None:
    """Exhaustive enumeration; None when nothing is feasible."""
    import itertools

    budget = budget or LatencyBudget()
    costs = [layer.cost(weights).tolist() for layer in table.layers]
    lats = [layer.latency.tolist() for layer in table.layers]
    best, best_choice = math.inf, None
    for choice in itertools.product(*(range(len(layer)) for layer in table.layers)):
        lat = sum(lats[k][j] for k, j in enumerate(choice))
        if lat > budget.cycles:
            continue
        cost = sum(costs[k][j] for k, j in enumerate(choice))
        if cost < best:
            best, best_choice = cost, choice
    if best_choice is None:
        return None
    return _replace(table.assignment(best_choice, budget, weights), method="brute-force")


# ---------------------------------------------------------------------------
# baselines

_CHUNK = 8192


def solve_stochastic(table: CandidateTable, budget: LatencyBudget | None = None,
                     weights: Sequence[float] = DEFAULT_WEIGHTS, trials: int = 1000,
                     seed: int = 0) -> Assignment:
    """Best feasible assignment among ``trials`` uniform random draws.

    Each trial is costed on its own, as a per-trial model evaluation would
    be; only the random draws are batched.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    budget = budget or LatencyBudget()
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    sizes = np.array([len(layer) for layer in table.layers])
    costs = [layer.cost(weights).tolist() for layer in table.layers]
    lats = [layer.latency.tolist() for layer in table.layers]
    B = budget.cycles
    best_cost, best_choice = math.inf, None
    fallback_lat, fallback = math.inf, None
    done = 0
    while done < trials:
        n = min(_CHUNK, trials - done)
        draws = (rng.random((n, len(sizes))) * sizes).astype(np.int64).tolist()
        for choice in draws:
            lat = 0
            for k, j in enumerate(choice):
                lat += lats[k][j]
            if lat > B:
                if best_choice is None and lat < fallback_lat:
                    fallback_lat, fallback = lat, choice
                continue
            cost = 0.0
            for k, j in enumerate(choice):
                cost += costs[k][j]
            if cost < best_cost:
                best_cost, best_choice = cost, choice
        done += n
    a = table.assignment(best_choice if best_choice is not None else fallback, budget, weights)
    extra = {} if a.feasible else {"min_latency": table.min_latency()}
    return _replace(a, method="stochastic", trials=trials,
                    wall_time=time.perf_counter() - start, **extra)


def sa_acceptance(r_best: float, r_proposed: float, t: float) -> float:
    """Probability of moving to a feasible, non-improving proposal."""
    delta = r_best - r_proposed
    if delta >= 0:
        return 1.0
    if t <= 0:
        return 0.0
    return math.exp(delta / t)


def solve_sa(table: CandidateTable, budget: LatencyBudget | None = None,
             weights: Sequence[float] = DEFAULT_WEIGHTS, trials: int = 1000,
             seed: int = 0, t0: float = 100.0, cooling: float = 0.01) -> Assignment:
    """Simulated annealing over single-layer moves.

    Starts from a uniform random assignment.  While the current assignment
    breaks the budget, a move is taken only if it lowers latency; after that,
    proposals that break the budget are rejected, a new best is always taken,
    and other proposals are taken with ``exp((r_best - r_proposed) / t)``.
    ``t`` is multiplied by ``1 - cooling`` every iteration.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= cooling < 1:
        raise ValueError("cooling must be in [0, 1)")
    budget = budget or LatencyBudget()
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    sizes = [len(layer) for layer in table.layers]
    costs = [layer.cost(weights).tolist() for layer in table.layers]
    lats = [layer.latency.tolist() for layer in table.layers]
    movable = [k for k, m in enumerate(sizes) if m > 1]
    B = budget.cycles

    cur = [int(rng.integers(m)) for m in sizes]
    cur_lat = sum(lats[k][j] for k, j in enumerate(cur))
    feasible = cur_lat <= B
    best_cost = sum(costs[k][j] for k, j in enumerate(cur)) if feasible else math.inf
    best = list(cur) if feasible else None
    low_lat, low = cur_lat, list(cur)
    t = float(t0)
    keep = 1.0 - cooling

    done = 0
    while done < trials and movable:
        n = min(_CHUNK, trials - done)
        picks = rng.integers(0, len(movable), n).tolist()
        offsets = rng.random(n).tolist()
        coins = rng.random(n).tolist()
        for it in range(n):
            k = movable[picks[it]]
            m = sizes[k]
            old = cur[k]
            new = (old + 1 + int(offsets[it] * (m - 1))) % m
            prop_lat = cur_lat - lats[k][old] + lats[k][new]
            if not feasible:
                if prop_lat < cur_lat:
                    cur[k], cur_lat = new, prop_lat
                    if prop_lat < low_lat:
                        low_lat, low = prop_lat, list(cur)
                    if prop_lat <= B:
                        feasible = True
                        best_cost = sum(costs[i][j] for i, j in enumerate(cur))
                        best = list(cur)
            elif prop_lat <= B:
                cur[k] = new
                prop_cost = sum(costs[i][j] for i, j in enumerate(cur))
                if prop_cost < best_cost:
                    best_cost, best = prop_cost, list(cur)
                    cur_lat = prop_lat
                elif coins[it] < sa_acceptance(best_cost, prop_cost, t):
                    cur_lat = prop_lat
                else:
                    cur[k] = old
            t *= keep
        done += n

    a = table.assignment(best if best is not None else low, budget, weights)
    extra = {} if a.feasible else {"min_latency": table.min_latency()}
    return _replace(a, method="sa", trials=trials, wall_time=time.perf_counter() - start, **extra)


# ---------------------------------------------------------------------------
# comparison harness

COMPARE_COLUMNS = ("method", "trials", "seed", "luts", "dsps", "latency_us",
                   "search_time_s", "scalar_cost", "feasible", "reuse_factors")


@dataclass(frozen=True)
class CompareRow:
    method: str
    trials: int | None
    seed: int | None
    luts: float
    dsps: float
    latency_us: float
    search_time_s: float
    scalar_cost: float
    feasible: bool
    reuse_factors: tuple[int, ...] = field(default=())

    @classmethod
    def from_assignment(cls, a: Assignment, budget: LatencyBudget, seed=None) -> "CompareRow":
        return cls(a.method, a.trials, seed, a.total.lut, a.total.dsp,
                   budget.to_us(a.total.latency_cycles), a.wall_time, a.scalar_cost,
                   a.feasible, a.reuse_factors)


def compare(table: CandidateTable, budget: LatencyBudget | None = None,
            weights: Sequence[float] = DEFAULT_WEIGHTS,
            trial_ladder: Sequence[int] = (1_000, 10_000, 100_000, 1_000_000),
            seeds: Sequence[int] = (0,), methods: Sequence[str] = ("stochastic", "sa")) -> list[CompareRow]:
    """Exact solver against the random baselines at each trial count.

    Times cover the search only; candidate prediction is shared and done once
    by the caller.
    """
    budget = budget or LatencyBudget()
    rows = [CompareRow.from_assignment(solve_exact(table, budget, weights), budget)]
    solvers = {"stochastic": solve_stochastic, "sa": solve_sa}
    for method in methods:
        for trials in trial_ladder:
            for seed in seeds:
                a = solvers[method](table, budget, weights, trials=trials, seed=seed)
                rows.append(CompareRow.from_assignment(a, budget, seed))
    return rows

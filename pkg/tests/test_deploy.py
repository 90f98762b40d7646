import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import analytic_models, model1_net, oracle_optimum, random_table, stub_models
from hlsdeploy.costmodel import MissingModelError, ModelSet
from hlsdeploy.deploy import (
    CandidateTable,
    CostVector,
    LatencyBudget,
    LayerCandidates,
    brute_force,
    build_candidates,
    compare,
    prune_dominated,
    sa_acceptance,
    solve_exact,
    solve_sa,
    solve_stochastic,
)
from hlsdeploy.layers import LayerSpec, NetworkSpec

B = LatencyBudget


def toy2():
    # optimum: R=2 then R=3 (cost 50 + 45 = 95, latency 20 + 25 = 45)
    return CandidateTable.from_lists([
        [(1, 100, 10), (2, 50, 20), (4, 20, 40)],
        [(1, 90, 5), (3, 45, 25), (9, 10, 50)],
    ])


class TestTypes:
    def test_budget(self):
        b = LatencyBudget()
        assert (b.cycles, b.clock_mhz, b.micros) == (50000, 250, 200.0)
        assert b.to_us(25000) == 100.0
        with pytest.raises(ValueError):
            LatencyBudget(0)
        with pytest.raises(ValueError):
            LatencyBudget(10, 0)

    def test_cost_vector(self):
        v = CostVector(1, 2, 3, 4, 5) + CostVector(10, 20, 30, 40, 50)
        assert v == CostVector(11, 22, 33, 44, 55)
        assert v.scalar() == 110 and v.scalar((1, 0, 0, 2)) == 99

    def test_candidates_validate(self):
        with pytest.raises(ValueError):
            LayerCandidates([2, 1], np.zeros((2, 4)), [1, 1])
        with pytest.raises(ValueError):
            LayerCandidates([1], np.zeros((1, 4)), [1.5])
        with pytest.raises(ValueError):
            LayerCandidates([], np.zeros((0, 4)), [])
        with pytest.raises(ValueError):
            LayerCandidates([1], -np.ones((1, 4)), [1])


class TestBuildCandidates:
    def test_dense_2x3_four_candidates(self, stubs):
        net = NetworkSpec(2, (LayerSpec.dense(3),))
        (layer,) = build_candidates(net, stubs).layers
        assert layer.reuse_factors.tolist() == [1, 2, 3, 6]

    def test_constant_stubs_share_vector(self, stubs):
        table = build_candidates(model1_net(), stubs)
        vecs = {layer.vector(j) for layer in table.layers for j in range(len(layer))}
        assert vecs == {CostVector(100, 50, 2, 4, 10)}

    def test_latency_ceiling(self):
        ms = stub_models({"lut": 1, "ff": 1, "bram": 1, "dsp": 1, "latency": 10.2})
        table = build_candidates(NetworkSpec(4, (LayerSpec.dense(4),)), ms)
        assert table.layers[0].latency.dtype.kind == "i"
        assert set(table.layers[0].latency.tolist()) == {11}

    def test_missing_model(self, stubs):
        partial = ModelSet({k: v for k, v in stubs.models.items() if k[0].value != "lstm"})
        net = NetworkSpec(8, (LayerSpec.lstm(4), LayerSpec.dense(1)))
        with pytest.raises(MissingModelError, match="lstm"):
            build_candidates(net, partial)

    def test_model1_shape(self):
        table = build_candidates(model1_net(), analytic_models())
        assert len(table) == 11
        assert all(len(layer) >= 1 for layer in table.layers)


class TestExact:
    def test_only_feasible_choice(self):
        table = CandidateTable.from_lists([[(1, 100, 10), (2, 60, 30)]])
        a = solve_exact(table, B(20))
        assert a.reuse_factors == (1,) and a.feasible and a.scalar_cost == 100

    def test_toy2_matches_enumeration(self):
        a = solve_exact(toy2(), B(45))
        assert (a.scalar_cost, a.reuse_factors) == oracle_optimum(toy2(), 45) == (95.0, (2, 3))

    def test_infeasible_reports_min_latency(self):
        a = solve_exact(toy2(), B(14))
        assert not a.feasible and a.min_latency == 15 and a.objective == math.inf

    def test_lexicographic_tie(self):
        table = CandidateTable.from_lists([[(1, 10, 0), (2, 5, 0), (3, 5, 0)],
                                           [(1, 5, 0), (2, 10, 0), (4, 5, 0)]])
        assert solve_exact(table, B(1)).reuse_factors == (2, 1)
        assert solve_exact(table, B(1), method="bnb").reuse_factors == (2, 1)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng, max_layers=4, max_cands=6)
        budget = int(rng.integers(1, 150))
        want = oracle_optimum(table, budget)
        for method in ("dp", "bnb"):
            a = solve_exact(table, B(budget), method=method)
            if want is None:
                assert not a.feasible
            else:
                assert a.feasible and (a.scalar_cost, a.reuse_factors) == want

    @given(st.integers(0, 2**32 - 1))
    def test_weights_respected(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng, max_layers=3, max_cands=5)
        w = tuple(rng.integers(0, 4, size=4).tolist())
        want = oracle_optimum(table, 80, w)
        a = solve_exact(table, B(80), w)
        assert (want is None and not a.feasible) or (a.scalar_cost, a.reuse_factors) == want

    @given(st.integers(0, 2**32 - 1))
    def test_budget_monotone(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng)
        costs = [solve_exact(table, B(b)).objective for b in range(10, 400, 30)]
        assert all(x >= y for x, y in zip(costs, costs[1:]))

    @given(st.integers(0, 2**32 - 1))
    def test_pruning_sound(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng, max_layers=4, max_cands=8)
        pruned = []
        for layer in table.layers:
            keep = prune_dominated(layer.latency, layer.cost())
            pruned.append(LayerCandidates(layer.reuse_factors[keep], layer.resources[keep],
                                          layer.latency[keep]))
        full, small = oracle_optimum(table, 100), oracle_optimum(CandidateTable(tuple(pruned)), 100)
        assert full == small

    def test_prune_examples(self):
        lat = np.array([10, 20, 20, 30])
        cost = np.array([5.0, 5.0, 3.0, 4.0])
        # 1 dominated by 0 (same cost, lower latency); 3 dominated by 2
        assert prune_dominated(lat, cost).tolist() == [0, 2]

    def test_large_budget_uses_bnb(self):
        table = random_table(np.random.default_rng(0))
        a = solve_exact(table, B(2_000_000))
        b = solve_exact(table, B(2_000_000), method="dp")
        assert a.reuse_factors == b.reuse_factors

    def test_model1_pruned_grid_brute_force(self):
        """Eleven layers, each cut to 3 candidates: 177,147 combinations."""
        table = build_candidates(model1_net(), analytic_models())
        small = []
        for layer in table.layers:
            idx = np.unique(np.linspace(0, len(layer) - 1, 3).round().astype(int))
            small.append(LayerCandidates(layer.reuse_factors[idx], layer.resources[idx],
                                         layer.latency[idx]))
        small = CandidateTable(tuple(small))
        budget = B(int(small.min_latency() + 3000))
        a, bf = solve_exact(small, budget), brute_force(small, budget)
        assert a.feasible and a.scalar_cost == pytest.approx(bf.scalar_cost, rel=1e-12)

    def test_assignment_invariants(self):
        table = build_candidates(model1_net(), analytic_models())
        a = solve_exact(table)
        assert a.feasible and a.total.latency_cycles <= 50000
        assert a.total.lut == pytest.approx(sum(v.lut for v in a.per_layer))
        assert a.scalar_cost == pytest.approx(sum(a.total.resources))
        d = a.to_dict(B())
        assert d["latency_us"] <= 200 and "wall_time" in d


class TestBaselines:
    def test_sa_acceptance(self):
        assert sa_acceptance(10, 10, 5) == 1.0
        assert sa_acceptance(10, 5, 5) == 1.0
        assert sa_acceptance(10, 20, 10) == pytest.approx(math.exp(-1))
        assert sa_acceptance(10, 20, 0) == 0.0

    def test_single_candidate_tables(self):
        table = CandidateTable.from_lists([[(4, 7, 3)], [(2, 1, 1)]])
        for solver in (solve_stochastic, solve_sa):
            a = solver(table, B(10), trials=1)
            assert a.reuse_factors == (4, 2) and a.feasible

    def test_equal_costs_any_is_optimal(self):
        table = CandidateTable.from_lists([[(1, 5, 1), (2, 5, 1), (3, 5, 1)]] * 3)
        assert solve_sa(table, B(10), trials=50, seed=3).scalar_cost == 15

    def test_stochastic_converges_on_toy(self):
        a = solve_stochastic(toy2(), B(45), trials=10**6, seed=0)
        assert (a.scalar_cost, a.reuse_factors) == (95.0, (2, 3))

    def test_sa_reaches_optimum(self):
        hits = sum(solve_sa(toy2(), B(45), trials=10**5, seed=s).scalar_cost == 95.0
                   for s in range(100))
        assert hits >= 99

    def test_deterministic_per_seed(self):
        table = random_table(np.random.default_rng(4))
        for solver in (solve_stochastic, solve_sa):
            assert solver(table, B(100), trials=500, seed=2).choice == \
                solver(table, B(100), trials=500, seed=2).choice

    @given(st.integers(0, 2**32 - 1), st.integers(0, 20))
    def test_never_beat_exact(self, seed, s):
        rng = np.random.default_rng(seed)
        table = random_table(rng, integer=False)
        budget = B(int(rng.integers(1, 300)))
        exact = solve_exact(table, budget).objective
        for solver in (solve_stochastic, solve_sa):
            a = solver(table, budget, trials=300, seed=s)
            if math.isinf(exact):
                assert not a.feasible
            else:
                assert a.objective >= exact - 1e-9 * max(1.0, exact)
            if a.feasible:
                assert a.total.latency_cycles <= budget.cycles

    def test_infeasible_verdicts(self):
        for solver in (solve_stochastic, solve_sa):
            a = solver(toy2(), B(10), trials=100)
            assert not a.feasible and a.min_latency == 15

    def test_bad_args(self):
        with pytest.raises(ValueError):
            solve_stochastic(toy2(), trials=0)
        with pytest.raises(ValueError):
            solve_sa(toy2(), cooling=1.0)


def test_compare_rows():
    rows = compare(toy2(), B(45), trial_ladder=(10, 100), seeds=(0, 1))
    assert rows[0].method == "exact" and rows[0].trials is None
    assert len(rows) == 1 + 2 * 2 * 2
    assert all(r.scalar_cost >= rows[0].scalar_cost for r in rows if r.feasible)
    assert all(r.search_time_s >= 0 for r in rows)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hlsdeploy.costmodel import FEATURES, ModelSet, TARGETS
from hlsdeploy.layers import LayerKind, LayerSpec, NetworkSpec

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class ConstantModel:
    def __init__(self, value):
        self.value = float(value)

    def predict(self, X):
        return np.full(len(np.atleast_2d(X)), self.value)


class FormulaModel:
    """Prediction from a function of the named feature columns."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cols = {name: X[:, i] for i, name in enumerate(FEATURES)}
        return np.asarray(self.fn(cols), dtype=float)


def stub_models(values=None) -> ModelSet:
    """Constant models for every (kind, target)."""
    values = values or {"lut": 100.0, "ff": 50.0, "bram": 2.0, "dsp": 4.0, "latency": 10.0}
    models = ModelSet()
    for kind in LayerKind:
        for target in TARGETS:
            models[(kind, target)] = ConstantModel(values[target])
    return models


def analytic_models() -> ModelSet:
    """Noise-free models shaped like the synthetic generator: cost ~ block
    factor, latency ~ reuse factor x sequence length."""
    models = ModelSet()
    for kind in LayerKind:
        models[(kind, "lut")] = FormulaModel(lambda c: 40 * c["block_factor"] + 10 * c["n_out"] + 1000)
        models[(kind, "ff")] = FormulaModel(lambda c: 15 * c["block_factor"] + 1000)
        models[(kind, "bram")] = FormulaModel(lambda c: 0.01 * c["block_factor"] + 1)
        models[(kind, "dsp")] = FormulaModel(lambda c: c["block_factor"])
        models[(kind, "latency")] = FormulaModel(lambda c: c["reuse_factor"] * c["seq_len"] + 20)
    return models


def model1_net() -> NetworkSpec:
    """11 layers: five conv1d then six dense."""
    convs = [LayerSpec.conv1d(c, 3, 2) for c in (8, 8, 8, 8, 32)]
    dense = [LayerSpec.dense(n) for n in (76, 76, 76, 76, 76, 1)]
    return NetworkSpec(512, tuple(convs + dense))


@pytest.fixture
def stubs():
    return stub_models()


def random_table(rng, max_layers=6, max_cands=10, max_lat=60, max_cost=40, integer=True):
    """Random MCKP instance: ascending reuse factors, small integer data so
    that cost ties are common."""
    from hlsdeploy.deploy import CandidateTable

    layers = []
    for _ in range(int(rng.integers(1, max_layers + 1))):
        m = int(rng.integers(1, max_cands + 1))
        rfs = sorted(rng.choice(np.arange(1, 200), size=m, replace=False).tolist())
        lat = rng.integers(0, max_lat + 1, size=m).tolist()
        if integer:
            res = rng.integers(0, max_cost + 1, size=(m, 4)).astype(float)
        else:
            res = rng.uniform(0, max_cost, size=(m, 4))
        layers.append([(r, tuple(res[j]), lat[j]) for j, r in enumerate(rfs)])
    return CandidateTable.from_lists(layers)


def oracle_optimum(table, budget_cycles, weights=(1, 1, 1, 1)):
    """(cost, reuse factors) of the best feasible choice by enumeration; ties
    go to the lexicographically smallest reuse-factor vector."""
    import itertools

    w = np.asarray(weights, dtype=float)
    best = None
    for choice in itertools.product(*(range(len(c)) for c in table.layers)):
        lat = sum(int(c.latency[j]) for c, j in zip(table.layers, choice))
        if lat > budget_cycles:
            continue
        cost = float(sum(c.resources[j] @ w for c, j in zip(table.layers, choice)))
        rfs = tuple(int(c.reuse_factors[j]) for c, j in zip(table.layers, choice))
        if best is None or (cost, rfs) < best:
            best = (cost, rfs)
    return best

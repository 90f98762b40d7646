"""Two-objective architecture search with a Pareto archive.

Objective 1 is an error measure supplied by an evaluator (minimized);
objective 2 is the network's multiply count from :mod:`hlsdeploy.layers`,
never from the evaluator.  Sampling is seeded uniform random.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shlex
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .layers import LayerKind, LayerSpec, NetworkSpec, infer_geometry, network_workload


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive integer ranges ``(lo, hi)`` and explicit choice tuples."""

    input_lengths: tuple[int, ...] = (64, 128, 256, 512)
    input_channels: int = 1
    conv_blocks: tuple[int, int] = (0, 5)
    conv_channels: tuple[int, int] = (1, 256)
    kernels: tuple[int, ...] = (3, 5)
    pools: tuple[int, ...] = (1, 2)
    lstm_layers: tuple[int, int] = (0, 3)
    lstm_units: tuple[int, int] = (1, 425)
    dense_layers: tuple[int, int] = (1, 5)
    dense_neurons: tuple[int, int] = (1, 512)
    # size of the last dense layer (the regression output); None samples it
    output_size: int | None = 1

    def __post_init__(self):
        for name in ("input_lengths", "kernels", "pools"):
            value = tuple(int(v) for v in getattr(self, name))
            if not value or min(value) < 1:
                raise ValueError(f"{name} needs at least one positive value")
            object.__setattr__(self, name, value)
        for name in ("conv_blocks", "conv_channels", "lstm_layers", "lstm_units",
                     "dense_layers", "dense_neurons"):
            lo, hi = (int(v) for v in getattr(self, name))
            floor = 0 if name in ("conv_blocks", "lstm_layers") else 1
            if lo < floor or hi < lo:
                raise ValueError(f"{name} range {lo, hi} is invalid")
            object.__setattr__(self, name, (lo, hi))
        if self.output_size is not None and self.output_size < 1:
            raise ValueError("output_size must be >= 1")
        # deepest, most-pooled conv stack must still leave one sample
        if min(self.input_lengths) < max(self.pools) ** self.conv_blocks[1]:
            raise ValueError("smallest input length cannot survive the deepest pooling stack")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown search-space fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "SearchSpace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sample(space: SearchSpace, seed: int, trial_index: int) -> NetworkSpec:
    """The network for one (seed, trial index); draws happen in a fixed order."""
    rng = np.random.default_rng([seed, trial_index])

    def between(bounds):
        return int(rng.integers(bounds[0], bounds[1] + 1))

    def pick(choices):
        return int(choices[rng.integers(len(choices))])

    n = pick(space.input_lengths)
    layers = []
    for _ in range(between(space.conv_blocks)):
        layers.append(LayerSpec.conv1d(between(space.conv_channels), pick(space.kernels),
                                       pick(space.pools)))
    for _ in range(between(space.lstm_layers)):
        layers.append(LayerSpec.lstm(between(space.lstm_units)))
    n_dense = between(space.dense_layers)
    for i in range(n_dense):
        size = between(space.dense_neurons)
        if i == n_dense - 1 and space.output_size is not None:
            size = space.output_size
        layers.append(LayerSpec.dense(size))
    return NetworkSpec(n, tuple(layers), space.input_channels)


# ---------------------------------------------------------------------------
# evaluators: callables (net, seed) -> float

def _net_seed(net: NetworkSpec, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}:{net.to_json()}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def parameter_count(net: NetworkSpec) -> int:
    total = 0
    for g in infer_geometry(net):
        if g.kind is LayerKind.LSTM:
            total += (g.in_features + g.out_features) * g.n_out
        else:
            total += g.n_in * g.n_out
    return total


@dataclass(frozen=True)
class SurrogateEvaluator:
    """Analytic stand-in for validation RMSE.

    ``floor + span / (1 + sqrt(params / scale))``, lowered by ``stage_bonus``
    for each of a conv and an LSTM stage being present, plus Gaussian noise
    whose draw depends only on (network, seed).
    """

    floor: float = 0.07
    span: float = 0.15
    scale: float = 2.0e4
    stage_bonus: float = 0.01
    noise: float = 0.003

    def __call__(self, net: NetworkSpec, seed: int = 0) -> float:
        params = parameter_count(net)
        value = self.floor + self.span / (1.0 + math.sqrt(params / self.scale))
        kinds = {layer.kind for layer in net.layers}
        value -= self.stage_bonus * ((LayerKind.CONV1D in kinds) + (LayerKind.LSTM in kinds))
        if self.noise:
            value += self.noise * np.random.default_rng(_net_seed(net, seed)).standard_normal()
        return max(value, 0.0)


@dataclass(frozen=True)
class CommandEvaluator:
    """Runs a user command with the network JSON on stdin.

    The command must print one real number.  The seed is exported as
    ``HLSDEPLOY_SEED``.
    """

    command: str
    timeout: float | None = None

    def __call__(self, net: NetworkSpec, seed: int = 0) -> float:
        env = dict(os.environ, HLSDEPLOY_SEED=str(seed))
        try:
            proc = subprocess.run(shlex.split(self.command), input=net.to_json(),
                                  capture_output=True, text=True, timeout=self.timeout,
                                  env=env)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EvaluationError(f"evaluator command failed: {exc}") from None
        if proc.returncode != 0:
            msg = proc.stderr.strip().splitlines()[-1:] or [""]
            raise EvaluationError(f"evaluator exited {proc.returncode}: {msg[0]}")
        try:
            value = float(proc.stdout.strip())
        except ValueError:
            raise EvaluationError(f"evaluator printed {proc.stdout.strip()!r}, not a number") from None
        if not math.isfinite(value):
            raise EvaluationError(f"evaluator returned non-finite value {value}")
        return value


def make_evaluator(text: str) -> Callable[[NetworkSpec, int], float]:
    """``surrogate`` or ``cmd:<command line>``."""
    if text == "surrogate":
        return SurrogateEvaluator()
    if text.startswith("cmd:"):
        return CommandEvaluator(text[4:].strip().strip('"'))
    raise ValueError(f"unknown evaluator {text!r}; use 'surrogate' or 'cmd:<command>'")


# ---------------------------------------------------------------------------
# trials and archive

@dataclass
class Trial:
    id: int
    net: NetworkSpec
    workload: int
    obj1: float | None = None
    status: str = "pending"
    error: str = ""

    @property
    def objectives(self) -> tuple[float, int]:
        return (self.obj1, self.workload)

    def to_dict(self) -> dict:
        return {"id": self.id, "status": self.status, "obj1": self.obj1,
                "workload": self.workload, "network": self.net.to_dict(),
                "error": self.error}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Minimize-minimize Pareto dominance."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


@dataclass
class ParetoArchive:
    members: list[Trial] = field(default_factory=list)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def insert(self, trial: Trial) -> bool:
        """Add ``trial`` unless dominated; evict members it dominates."""
        if trial.status != "ok":
            raise ValueError(f"trial {trial.id} is not evaluated")
        o, w, i = trial.obj1, trial.workload, trial.id
        # a member beats the trial if it dominates it, or has identical
        # objectives and a lower id (so the archive ignores insertion order)
        for m in self.members:
            if m.obj1 <= o and m.workload <= w and (m.obj1 < o or m.workload < w or m.id < i):
                return False
        self.members = [m for m in self.members
                        if not (o <= m.obj1 and w <= m.workload
                                and (o < m.obj1 or w < m.workload or i < m.id))]
        self.members.append(trial)
        return True

    def front(self) -> list[Trial]:
        return sorted(self.members, key=lambda t: (t.workload, t.obj1, t.id))


def archive_insert(archive: ParetoArchive, trial: Trial) -> ParetoArchive:
    archive.insert(trial)
    return archive


def evaluate_trial(trial_id: int, net: NetworkSpec, evaluator, seed: int) -> Trial:
    trial = Trial(trial_id, net, network_workload(net))
    try:
        value = float(evaluator(net, seed))
        if not math.isfinite(value):
            raise EvaluationError(f"non-finite objective {value}")
    except Exception as exc:  # evaluator failures are logged, never fatal
        trial.status, trial.error = "failed", f"{type(exc).__name__}: {exc}"
        return trial
    trial.obj1, trial.status = value, "ok"
    return trial


def run_search(space: SearchSpace, evaluator, n_trials: int, seed: int = 0,
               eval_seed: int | None = None) -> tuple[ParetoArchive, list[Trial]]:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    eval_seed = seed if eval_seed is None else eval_seed
    archive = ParetoArchive()
    trials = []
    for i in range(n_trials):
        trial = evaluate_trial(i, sample(space, seed, i), evaluator, eval_seed)
        trials.append(trial)
        if trial.status == "ok":
            archive.insert(trial)
    return archive, trials


def export_front(archive: ParetoArchive, models=None, budget=None, weights=None) -> list[dict]:
    """Front rows sorted by workload; with ``models``, each is also deployed."""
    if not len(archive):
        raise ValueError("archive is empty")
    rows = []
    for trial in archive.front():
        row = {"trial_id": trial.id, "obj1": trial.obj1, "workload": trial.workload,
               "input_length": trial.net.input_length,
               "input_channels": trial.net.input_channels,
               "layers": trial.net.describe(), "network": trial.net.to_json()}
        if models is not None:
            from .deploy import DEFAULT_WEIGHTS, LatencyBudget, build_candidates, solve_exact

            budget = budget or LatencyBudget()
            a = solve_exact(build_candidates(trial.net, models), budget,
                            weights or DEFAULT_WEIGHTS)
            row.update({
                "luts": a.total.lut, "ffs": a.total.ff, "brams": a.total.bram,
                "dsps": a.total.dsp, "latency_cycles": a.total.latency_cycles,
                "latency_us": budget.to_us(a.total.latency_cycles),
                "feasible": a.feasible,
                "reuse_factors": " ".join(str(r) for r in a.reuse_factors),
            })
        rows.append(row)
    return rows

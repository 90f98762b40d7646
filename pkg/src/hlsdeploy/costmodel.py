"""Per-layer resource/latency observations and the forests trained on them."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .forest import ForestConfig, Tree, fit_forest, predict_forest
from .layers import (
    LayerGeometry,
    LayerKind,
    LayerSpec,
    NetworkSpec,
    block_factor,
    correct_reuse_factor,
    infer_geometry,
)

TARGETS = ("lut", "ff", "bram", "dsp", "latency")
RESOURCES = ("lut", "ff", "bram", "dsp")
FEATURES = ("seq_len", "in_features", "layer_size", "reuse_factor",
            "n_in", "n_out", "block_factor")
CSV_COLUMNS = ("kind", "seq_len", "in_features", "layer_size", "kernel",
               "reuse_factor", "lut", "ff", "bram", "dsp", "latency_cycles")

MODEL_FORMAT = "hlsdeploy-forest"
MODEL_FORMAT_VERSION = 1

_KIND_ORDER = {LayerKind.CONV1D: 0, LayerKind.LSTM: 1, LayerKind.DENSE: 2}


class IngestError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


def _check_target(target: str) -> str:
    if target == "latency_cycles":
        target = "latency"
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}; expected one of {TARGETS}")
    return target


def feature_vector(geom: LayerGeometry, reuse_factor: int) -> tuple[int, ...]:
    """Features of one layer at one reuse factor, ordered as ``FEATURES``."""
    return (geom.seq_len, geom.in_features, geom.out_features, reuse_factor,
            geom.n_in, geom.n_out, block_factor(geom, reuse_factor))


def layer_geometry(kind, seq_len: int, in_features: int, layer_size: int,
                   kernel: int | None = None) -> LayerGeometry:
    """Geometry of an isolated layer described by observation fields."""
    kind = LayerKind.parse(kind)
    if kind is LayerKind.CONV1D:
        if not kernel:
            raise ValueError("conv1d observation needs a kernel")
        return LayerGeometry(kind, in_features * kernel, layer_size, seq_len,
                             in_features, layer_size)
    if kernel:
        raise ValueError(f"{kind.value} observation must not carry a kernel")
    if kind is LayerKind.LSTM:
        return LayerGeometry(kind, in_features, 4 * layer_size, seq_len,
                             in_features, layer_size)
    return LayerGeometry(kind, in_features, layer_size, 1, in_features, layer_size)


@dataclass(frozen=True)
class Observation:
    kind: LayerKind
    seq_len: int
    in_features: int
    layer_size: int
    reuse_factor: int
    n_in: int
    n_out: int
    block_factor: int
    lut: float
    ff: float
    bram: float
    dsp: float
    latency_cycles: float
    kernel: int | None = None

    def __post_init__(self):
        for name in ("seq_len", "in_features", "layer_size", "reuse_factor",
                     "n_in", "n_out", "block_factor"):
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("lut", "ff", "bram", "dsp", "latency_cycles"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.block_factor != -(-self.n_in * self.n_out // self.reuse_factor):
            raise ValueError("block_factor inconsistent with n_in, n_out, reuse_factor")
        for t in ("lut", "ff", "bram", "dsp", "latency_cycles"):
            v = getattr(self, t)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"target {t} must be finite and >= 0, got {v}")

    @property
    def features(self) -> tuple[int, ...]:
        return (self.seq_len, self.in_features, self.layer_size, self.reuse_factor,
                self.n_in, self.n_out, self.block_factor)

    @property
    def key(self) -> tuple:
        return (_KIND_ORDER[self.kind], self.features)

    def target(self, name: str) -> float:
        name = _check_target(name)
        return self.latency_cycles if name == "latency" else getattr(self, name)

    @classmethod
    def from_layer(cls, kind, seq_len, in_features, layer_size, kernel,
                   reuse_factor, targets: Mapping[str, float]) -> "Observation":
        geom = layer_geometry(kind, seq_len, in_features, layer_size, kernel)
        return cls(
            geom.kind, seq_len, in_features, layer_size, reuse_factor,
            geom.n_in, geom.n_out, block_factor(geom, reuse_factor),
            float(targets["lut"]), float(targets["ff"]), float(targets["bram"]),
            float(targets["dsp"]), float(targets["latency_cycles"]),
            kernel if geom.kind is LayerKind.CONV1D else None,
        )

    def to_row(self) -> dict:
        return {
            "kind": self.kind.value, "seq_len": self.seq_len,
            "in_features": self.in_features, "layer_size": self.layer_size,
            "kernel": "" if self.kernel is None else self.kernel,
            "reuse_factor": self.reuse_factor, "lut": repr(self.lut),
            "ff": repr(self.ff), "bram": repr(self.bram), "dsp": repr(self.dsp),
            "latency_cycles": repr(self.latency_cycles),
        }


@dataclass
class ObservationSet:
    observations: list[Observation]
    provenance: str = ""
    n_rows: int = 0  # raw rows before averaging

    def __len__(self):
        return len(self.observations)

    def kinds(self) -> list[LayerKind]:
        present = {o.kind for o in self.observations}
        return [k for k in LayerKind if k in present]

    def of_kind(self, kind) -> "ObservationSet":
        kind = LayerKind.parse(kind)
        obs = [o for o in self.observations if o.kind is kind]
        return ObservationSet(obs, self.provenance, len(obs))

    def counts(self) -> dict[str, int]:
        return {k.value: sum(o.kind is k for o in self.observations) for k in LayerKind}

    def X(self) -> np.ndarray:
        return np.array([o.features for o in self.observations], dtype=np.float64).reshape(-1, len(FEATURES))

    def y(self, target: str) -> np.ndarray:
        return np.array([o.target(target) for o in self.observations], dtype=np.float64)

    def split(self, train_frac: float = 0.8, seed: int = 0):
        """Seeded shuffle split, stratified by layer kind."""
        if not 0 < train_frac < 1:
            raise ValueError("train_frac must be in (0, 1)")
        rng = np.random.default_rng(seed)
        train, test = [], []
        for kind in LayerKind:
            obs = [o for o in self.observations if o.kind is kind]
            if not obs:
                continue
            perm = rng.permutation(len(obs))
            n_train = int(round(train_frac * len(obs)))
            n_train = min(max(n_train, 1), len(obs) - 1) if len(obs) > 1 else len(obs)
            train += [obs[i] for i in perm[:n_train]]
            test += [obs[i] for i in perm[n_train:]]
        return (ObservationSet(train, self.provenance, len(train)),
                ObservationSet(test, self.provenance, len(test)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for o in self.observations:
            w.writerow(o.to_row())
        return buf.getvalue()


def aggregate(observations: Iterable[Observation], provenance: str = "") -> ObservationSet:
    """Average targets of observations sharing a feature tuple."""
    groups: dict[tuple, list[Observation]] = defaultdict(list)
    n = 0
    for o in observations:
        groups[o.key].append(o)
        n += 1
    out = []
    for key in sorted(groups):
        grp = groups[key]
        first = grp[0]
        if len(grp) == 1:
            out.append(first)
            continue
        means = {t: float(np.mean([getattr(o, t) for o in grp]))
                 for t in ("lut", "ff", "bram", "dsp", "latency_cycles")}
        out.append(Observation(
            first.kind, first.seq_len, first.in_features, first.layer_size,
            first.reuse_factor, first.n_in, first.n_out, first.block_factor,
            kernel=first.kernel, **means))
    return ObservationSet(out, provenance, n)


def _parse_row(row: Mapping[str, str], line: int) -> Observation:
    try:
        kind = LayerKind.parse(row["kind"])
        kernel_text = (row.get("kernel") or "").strip()
        kernel = int(kernel_text) if kernel_text else None
        targets = {}
        for t in ("lut", "ff", "bram", "dsp", "latency_cycles"):
            targets[t] = float(row[t])
        return Observation.from_layer(
            kind, int(row["seq_len"]), int(row["in_features"]), int(row["layer_size"]),
            kernel, int(row["reuse_factor"]), targets)
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"row {line}: {exc}") from None


def ingest(rows: Iterable[Mapping[str, str]], provenance: str = "") -> ObservationSet:
    """Parse tabular records and average rows with identical features.

    Row numbers in errors count the header as row 1, as a spreadsheet would.
    """
    parsed = [_parse_row(row, i) for i, row in enumerate(rows, start=2)]
    if not parsed:
        raise IngestError("no observation rows")
    return aggregate(parsed, provenance)


def read_csv(path, provenance: str | None = None) -> ObservationSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise IngestError(f"{path}: header missing columns {sorted(missing)}")
        return ingest(reader, provenance if provenance is not None else str(path))


# ---------------------------------------------------------------------------
# synthetic corpus

# resource = a * block_factor + b * n_out + c ; latency = d * reuse_factor * seq_len + e
SYNTH_COEFFS = {
    LayerKind.CONV1D: {
        "lut": (45.0, 30.0, 2100.0), "ff": (18.0, 12.0, 1000.0),
        "bram": (0.02, 0.5, 0.0), "dsp": (1.0, 0.0, 1.0), "latency": (1.0, 45.0),
    },
    LayerKind.LSTM: {
        "lut": (60.0, 25.0, 18000.0), "ff": (20.0, 10.0, 7500.0),
        "bram": (0.05, 0.3, 16.0), "dsp": (1.2, 0.0, 24.0), "latency": (2.0, 209.0),
    },
    LayerKind.DENSE: {
        "lut": (40.0, 15.0, 1200.0), "ff": (12.0, 8.0, 1250.0),
        "bram": (0.01, 0.2, 0.0), "dsp": (1.0, 0.0, 1.0), "latency": (1.0, 7.0),
    },
}


def synthetic_targets(kind, geom: LayerGeometry, reuse_factor: int) -> dict[str, float]:
    """Noise-free synthetic targets of one layer at one reuse factor."""
    coef = SYNTH_COEFFS[LayerKind.parse(kind)]
    bf = block_factor(geom, reuse_factor)
    out = {t: a * bf + b * geom.n_out + c for t, (a, b, c) in
           ((t, coef[t]) for t in RESOURCES)}
    d, e = coef["latency"]
    out["latency_cycles"] = d * reuse_factor * geom.seq_len + e
    return out


@dataclass(frozen=True)
class SweepSpec:
    """Grid of generated networks.

    Each network uses one size per stage; every layer of every network is
    synthesized once per raw reuse factor (corrected per layer).  Layers whose
    block factor exceeds ``max_block_factor`` are treated as failed syntheses
    and dropped.
    """

    input_lengths: tuple[int, ...] = (64, 96, 128, 160, 192, 256, 320, 384, 448, 512)
    conv_counts: tuple[int, ...] = (1, 2, 3, 4)
    conv_channels: tuple[int, ...] = (8, 16, 24, 32)
    lstm_counts: tuple[int, ...] = (0, 1, 2)
    lstm_units: tuple[int, ...] = (8, 16, 24, 32)
    dense_counts: tuple[int, ...] = (1, 2, 4)
    dense_neurons: tuple[int, ...] = (8, 16, 32, 48, 64)
    raw_reuse_factors: tuple[int, ...] = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48,
                                          64, 96, 128, 192, 256, 384, 512)
    kernel: int = 3
    pool: int = 2
    input_channels: int = 1
    max_block_factor: int | None = 4096

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if isinstance(value, (tuple, list)):
                if not value:
                    raise ValueError(f"sweep field {name} is empty")
                object.__setattr__(self, name, tuple(int(v) for v in value))
        if 0 in self.dense_counts:
            raise ValueError("every network needs a dense layer")

    @classmethod
    def coarse_grid(cls) -> "SweepSpec":
        """Three input lengths, eight raw reuse factors, no block-factor cap."""
        return cls(input_lengths=(128, 256, 512), conv_counts=(1, 2, 4),
                   conv_channels=(16, 32), lstm_counts=(0, 1, 2), lstm_units=(8, 16, 32),
                   dense_counts=(1, 2, 4), dense_neurons=(16, 32, 64),
                   raw_reuse_factors=(1, 2, 4, 16, 32, 64, 128, 512),
                   max_block_factor=None)

    def networks(self) -> Iterable[NetworkSpec]:
        for n, nc, ch, nl in itertools.product(self.input_lengths, self.conv_counts,
                                               self.conv_channels, self.lstm_counts):
            for units in (self.lstm_units if nl else (None,)):
                for nd, neurons in itertools.product(self.dense_counts, self.dense_neurons):
                    layers = [LayerSpec.conv1d(ch, self.kernel, self.pool)] * nc
                    layers += [LayerSpec.lstm(units)] * nl if nl else []
                    layers += [LayerSpec.dense(neurons)] * nd
                    yield NetworkSpec(n, tuple(layers), self.input_channels)

    def layer_contexts(self) -> list[tuple[LayerGeometry, int | None]]:
        """Distinct (geometry, kernel) pairs over all networks, in first-seen order."""
        seen = {}
        for net in self.networks():
            try:
                geoms = infer_geometry(net)
            except ValueError:
                continue
            for geom, layer in zip(geoms, net.layers):
                seen.setdefault((geom, layer.kernel), None)
        return list(seen)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def gen_synthetic(space: SweepSpec | None = None, noise_pct: float = 5.0,
                  seed: int = 0) -> ObservationSet:
    """Synthesize a corpus over ``space`` with multiplicative uniform noise.

    Each (layer context, raw reuse factor) pair is one synthesis run with its
    own noise draw.  Raw factors that correct to the same valid factor give
    repeated runs of one layer, which are averaged.
    """
    space = space or SweepSpec()
    if noise_pct < 0:
        raise ValueError("noise_pct must be >= 0")
    rng = np.random.default_rng(seed)
    scale = noise_pct / 100.0
    raw = []
    for geom, kernel in space.layer_contexts():
        for rr in space.raw_reuse_factors:
            r = correct_reuse_factor(geom, rr)
            bf = block_factor(geom, r)
            if space.max_block_factor is not None and bf > space.max_block_factor:
                continue
            targets = synthetic_targets(geom.kind, geom, r)
            if scale:
                noise = 1.0 + rng.uniform(-scale, scale, size=len(targets))
                targets = {t: v * f for (t, v), f in zip(targets.items(), noise)}
            raw.append(Observation(
                geom.kind, geom.seq_len, geom.in_features, geom.out_features, r,
                geom.n_in, geom.n_out, bf, kernel=kernel, **targets))
    if not raw:
        raise ValueError("sweep produced no synthesizable layers")
    return aggregate(raw, f"synthetic seed={seed} noise_pct={noise_pct}")


# ---------------------------------------------------------------------------
# models

@dataclass
class ForestModel:
    kind: LayerKind
    target: str
    trees: list[Tree]
    config: ForestConfig
    feature_schema: tuple[str, ...] = FEATURES
    n_train: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.feature_schema):
            raise ValueError(
                f"expected {len(self.feature_schema)} features {self.feature_schema}, "
                f"got {X.shape[1]}")
        return np.maximum(predict_forest(self.trees, X), 0.0)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind.value,
            "target": self.target,
            "feature_schema": list(self.feature_schema),
            "training_config": self.config.to_dict(),
            "n_train": self.n_train,
            "trees": [t.to_dict() for t in self.trees],
        }


def train(data: ObservationSet, kind, target: str, config: ForestConfig | None = None,
          n_jobs: int = 1) -> ForestModel:
    kind = LayerKind.parse(kind)
    target = _check_target(target)
    config = config or ForestConfig()
    subset = data.of_kind(kind)
    if len(subset) < 2:
        raise ValueError(f"need >= 2 {kind.value} observations to train, got {len(subset)}")
    trees = fit_forest(subset.X(), subset.y(target), config, n_jobs=n_jobs)
    return ForestModel(kind, target, trees, config, FEATURES, len(subset))


def predict(model, features) -> float | np.ndarray:
    """Clamped prediction for one feature tuple, an Observation, or a 2-D batch."""
    if isinstance(features, Observation):
        features = features.features
    arr = np.asarray(features, dtype=np.float64)
    out = model.predict(np.atleast_2d(arr))
    return float(out[0]) if arr.ndim == 1 else out


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    mape_pct: float
    rmse_pct: float
    value_range: tuple[float, float]
    n: int
    mape_excluded: int = 0


def regression_metrics(truth, pred) -> MetricsReport:
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.size == 0:
        raise ValueError("empty evaluation set")
    err = pred - truth
    ss_res = float(np.sum(err ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else -math.inf
    else:
        r2 = 1.0 - ss_res / ss_tot
    nz = truth != 0
    mape = float(np.mean(100.0 * np.abs(err[nz]) / np.abs(truth[nz]))) if nz.any() else 0.0
    lo, hi = float(truth.min()), float(truth.max())
    if hi == lo:
        raise ValueError("target range is zero; RMSE percentage is undefined")
    rmse_pct = 100.0 * math.sqrt(ss_res / truth.size) / (hi - lo)
    return MetricsReport(r2, mape, rmse_pct, (lo, hi), int(truth.size), int((~nz).sum()))


def evaluate(model: ForestModel, holdout: ObservationSet) -> MetricsReport:
    subset = holdout.of_kind(model.kind)
    if len(subset) == 0:
        raise ValueError(f"holdout has no {model.kind.value} observations")
    return regression_metrics(subset.y(model.target), model.predict(subset.X()))


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def model_filename(kind, target: str) -> str:
    return f"{LayerKind.parse(kind).value}_{_check_target(target)}.json"


def save_model(model: ForestModel, path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / model_filename(model.kind, model.target)
    text = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))
    atomic_write_text(path, text + "\n")
    return path


def load_model(path) -> ForestModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: model format version {doc.get('format_version')!r}, "
            f"this build reads version {MODEL_FORMAT_VERSION}")
    try:
        cfg = ForestConfig(**doc["training_config"])
        trees = [Tree.from_dict(t) for t in doc["trees"]]
        model = ForestModel(LayerKind.parse(doc["kind"]), _check_target(doc["target"]),
                            trees, cfg, tuple(doc["feature_schema"]), int(doc["n_train"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model ({exc})") from None
    if not trees:
        raise ModelFormatError(f"{path}: model has no trees")
    return model


class MissingModelError(LookupError):
    pass


@dataclass
class ModelSet:
    """Models keyed by (kind, target); anything with ``predict(X)`` works."""

    models: dict = field(default_factory=dict)

    def __getitem__(self, key):
        kind, target = LayerKind.parse(key[0]), _check_target(key[1])
        try:
            return self.models[(kind, target)]
        except KeyError:
            raise MissingModelError(f"no model for {kind.value}/{target}") from None

    def __setitem__(self, key, model):
        self.models[(LayerKind.parse(key[0]), _check_target(key[1]))] = model

    def __contains__(self, key):
        return (LayerKind.parse(key[0]), _check_target(key[1])) in self.models

    def require(self, kinds: Iterable[LayerKind]) -> None:
        for kind in kinds:
            for target in TARGETS:
                self[(kind, target)]

    def save(self, directory) -> list[Path]:
        return [save_model(m, Path(directory) / model_filename(k, t))
                for (k, t), m in sorted(self.models.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))]

    @classmethod
    def load(cls, directory) -> "ModelSet":
        directory = Path(directory)
        if not directory.is_dir():
            raise MissingModelError(f"model directory {directory} does not exist")
        out = cls()
        for kind in LayerKind:
            for target in TARGETS:
                p = directory / model_filename(kind, target)
                if p.exists():
                    out[(kind, target)] = load_model(p)
        return out

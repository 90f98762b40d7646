"""Layer shape inference, workload counting and reuse-factor arithmetic.

Everything here is pure and integer-exact.  A network is a 1D-convolution
stage, then an LSTM stage, then a dense stage; each layer's matrix-vector
core has an outer loop of ``n_in`` trips and an inner loop of ``n_out`` trips,
wrapped in a sequential loop of ``seq_len`` trips.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path


class LayerKind(str, enum.Enum):
    CONV1D = "conv1d"
    LSTM = "lstm"
    DENSE = "dense"

    @classmethod
    def parse(cls, value) -> "LayerKind":
        if isinstance(value, LayerKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown layer kind {value!r}") from None


# pipeline position of each kind; layers must appear in non-decreasing order
_STAGE = {LayerKind.CONV1D: 0, LayerKind.LSTM: 1, LayerKind.DENSE: 2}

DEFAULT_POOL = 2


class GeometryError(ValueError):
    pass


class ReuseFactorError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    size: int
    kernel: int | None = None
    pool: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind.parse(self.kind))
        if int(self.size) < 1:
            raise ValueError(f"layer size must be >= 1, got {self.size}")
        if self.kind is LayerKind.CONV1D:
            if self.kernel is None:
                raise ValueError("conv1d layer needs a kernel size")
            if self.pool is None:
                object.__setattr__(self, "pool", DEFAULT_POOL)
            if self.kernel < 1 or self.pool < 1:
                raise ValueError("conv1d kernel and pool must be >= 1")
        elif self.kernel is not None or self.pool is not None:
            raise ValueError(f"{self.kind.value} layer takes no kernel/pool")

    @classmethod
    def conv1d(cls, channels: int, kernel: int = 3, pool: int = DEFAULT_POOL) -> "LayerSpec":
        return cls(LayerKind.CONV1D, channels, kernel, pool)

    @classmethod
    def lstm(cls, units: int) -> "LayerSpec":
        return cls(LayerKind.LSTM, units)

    @classmethod
    def dense(cls, neurons: int) -> "LayerSpec":
        return cls(LayerKind.DENSE, neurons)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "size": self.size}
        if self.kind is LayerKind.CONV1D:
            d["kernel"] = self.kernel
            d["pool"] = self.pool
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        unknown = set(d) - {"kind", "size", "kernel", "pool"}
        if unknown:
            raise ValueError(f"unknown layer fields: {sorted(unknown)}")
        return cls(
            LayerKind.parse(d["kind"]),
            int(d["size"]),
            None if d.get("kernel") is None else int(d["kernel"]),
            None if d.get("pool") is None else int(d["pool"]),
        )


@dataclass(frozen=True)
class NetworkSpec:
    input_length: int
    layers: tuple[LayerSpec, ...]
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_length < 1 or self.input_channels < 1:
            raise ValueError("input_length and input_channels must be >= 1")
        stages = [_STAGE[layer.kind] for layer in self.layers]
        if stages != sorted(stages):
            raise ValueError("layers must be ordered conv1d*, lstm*, dense+")
        if not stages or stages[-1] != _STAGE[LayerKind.DENSE]:
            raise ValueError("network needs at least one dense layer")

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "input_channels": self.input_channels,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_length=int(d["input_length"]),
            input_channels=int(d.get("input_channels", 1)),
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def describe(self) -> str:
        parts = []
        for layer in self.layers:
            if layer.kind is LayerKind.CONV1D:
                parts.append(f"conv1d({layer.size},k{layer.kernel},p{layer.pool})")
            else:
                parts.append(f"{layer.kind.value}({layer.size})")
        return "|".join(parts)


@dataclass(frozen=True)
class LayerGeometry:
    """Loop trip counts of one layer.

    ``seq_len`` is the trip count of the sequential loop around the
    matrix-vector core; ``out_seq_len`` is the sequence length handed to the
    next layer (differs from ``seq_len`` only after conv pooling).
    """

    kind: LayerKind
    n_in: int
    n_out: int
    seq_len: int
    in_features: int
    out_features: int
    out_seq_len: int = field(default=0)

    def __post_init__(self):
        if not self.out_seq_len:
            object.__setattr__(self, "out_seq_len", self.seq_len)

    @property
    def product(self) -> int:
        return self.n_in * self.n_out


def infer_geometry(net: NetworkSpec) -> list[LayerGeometry]:
    seq, feat = net.input_length, net.input_channels
    flattened = False
    out = []
    for i, layer in enumerate(net.layers):
        if layer.kind is LayerKind.CONV1D:
            # same padding, stride 1: convolution keeps the length, pooling floors it
            pooled = seq // layer.pool
            if pooled < 1:
                raise GeometryError(
                    f"layer {i}: pooling {seq} by {layer.pool} collapses the sequence"
                )
            out.append(LayerGeometry(LayerKind.CONV1D, feat * layer.kernel, layer.size,
                                     seq, feat, layer.size, pooled))
            seq, feat = pooled, layer.size
        elif layer.kind is LayerKind.LSTM:
            out.append(LayerGeometry(LayerKind.LSTM, feat, 4 * layer.size,
                                     seq, feat, layer.size))
            feat = layer.size
        else:
            if not flattened:
                feat, seq, flattened = seq * feat, 1, True
            out.append(LayerGeometry(LayerKind.DENSE, feat, layer.size, 1, feat, layer.size))
            feat = layer.size
    return out


def workload(geom: LayerGeometry, spec: LayerSpec | None = None) -> int:
    """Multiplies in one forward pass of the layer."""
    if geom.kind is LayerKind.CONV1D:
        # s * k * f1 * f2, with n_in = k * f1
        return geom.seq_len * geom.n_in * geom.n_out
    if geom.kind is LayerKind.LSTM:
        units = geom.out_features if spec is None else spec.size
        return (geom.seq_len * geom.in_features + units) * (4 * units)
    return geom.n_in * geom.n_out


def network_workload(net: NetworkSpec) -> int:
    return sum(workload(g, s) for g, s in zip(infer_geometry(net), net.layers))


@lru_cache(maxsize=4096)
def _divisors(n: int) -> tuple[int, ...]:
    small, large = [], []
    for d in range(1, math.isqrt(n) + 1):
        if n % d == 0:
            small.append(d)
            if d != n // d:
                large.append(n // d)
    return tuple(small + large[::-1])


def valid_reuse_factors(geom: LayerGeometry) -> list[int]:
    return list(_divisors(geom.product))


def is_valid_reuse_factor(geom: LayerGeometry, r: int) -> bool:
    return r >= 1 and geom.product % r == 0


def block_factor(geom: LayerGeometry, r: int, layer: int | str | None = None) -> int:
    if not is_valid_reuse_factor(geom, r):
        where = "" if layer is None else f"layer {layer}: "
        raise ReuseFactorError(
            f"{where}reuse factor {r} does not divide n_in*n_out = {geom.product}"
        )
    return -(-geom.product // r)


def correct_reuse_factor(geom: LayerGeometry, raw: int) -> int:
    """Largest valid reuse factor not above ``raw`` (rounds down)."""
    if raw < 1:
        raise ValueError(f"raw reuse factor must be >= 1, got {raw}")
    divs = _divisors(geom.product)
    best = 1
    for d in divs:
        if d > raw:
            break
        best = d
    return best

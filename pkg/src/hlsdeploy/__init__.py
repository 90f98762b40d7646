"""Cost/latency models and reuse-factor optimization for dataflow NN accelerators."""

__version__ = "0.1.0"

from .layers import (  # noqa: E402
    LayerGeometry,
    LayerKind,
    LayerSpec,
    NetworkSpec,
    block_factor,
    correct_reuse_factor,
    infer_geometry,
    network_workload,
    valid_reuse_factors,
    workload,
)

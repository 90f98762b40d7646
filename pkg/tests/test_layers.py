import json

import pytest
from hypothesis import given, strategies as st

from hlsdeploy.layers import (
    GeometryError,
    LayerGeometry,
    LayerKind,
    LayerSpec,
    NetworkSpec,
    ReuseFactorError,
    block_factor,
    correct_reuse_factor,
    infer_geometry,
    network_workload,
    valid_reuse_factors,
    workload,
)


def divisors_oracle(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def dense_geom(n_in, n_out):
    return LayerGeometry(LayerKind.DENSE, n_in, n_out, 1, n_in, n_out)


geoms = st.builds(dense_geom, st.integers(1, 60), st.integers(1, 60))


class TestNetworkSpec:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            NetworkSpec(64, (LayerSpec.dense(4), LayerSpec.conv1d(4)))
        with pytest.raises(ValueError):
            NetworkSpec(64, (LayerSpec.lstm(4), LayerSpec.conv1d(4), LayerSpec.dense(1)))

    def test_needs_dense(self):
        with pytest.raises(ValueError):
            NetworkSpec(64, (LayerSpec.conv1d(4),))
        with pytest.raises(ValueError):
            NetworkSpec(64, ())

    def test_kernel_only_on_conv(self):
        with pytest.raises(ValueError):
            LayerSpec(LayerKind.DENSE, 4, kernel=3)
        with pytest.raises(ValueError):
            LayerSpec(LayerKind.CONV1D, 4)
        assert LayerSpec(LayerKind.CONV1D, 4, kernel=3).pool == 2

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LayerSpec.from_dict({"kind": "gru", "size": 3})

    def test_json_round_trip(self):
        net = NetworkSpec(128, (LayerSpec.conv1d(16, 5, 1), LayerSpec.lstm(8),
                                LayerSpec.dense(4)), input_channels=2)
        doc = json.loads(net.to_json())
        assert set(doc) == {"input_length", "input_channels", "layers"}
        assert doc["layers"][0] == {"kind": "conv1d", "size": 16, "kernel": 5, "pool": 1}
        assert doc["layers"][1] == {"kind": "lstm", "size": 8}
        assert NetworkSpec.from_json(net.to_json()) == net

    def test_input_channels_default(self):
        net = NetworkSpec.from_dict({"input_length": 8, "layers": [{"kind": "dense", "size": 2}]})
        assert net.input_channels == 1


class TestInferGeometry:
    def test_single_dense(self):
        (g,) = infer_geometry(NetworkSpec(512, (LayerSpec.dense(64),)))
        assert (g.n_in, g.n_out, g.seq_len) == (512, 64, 1)

    def test_conv_preserves_length(self):
        net = NetworkSpec(512, (LayerSpec.conv1d(256, 3, 1), LayerSpec.dense(1)), input_channels=256)
        g = infer_geometry(net)[0]
        assert (g.n_in, g.n_out, g.out_seq_len) == (768, 256, 512)

    def test_conv_pool_then_lstm(self):
        # hand trace: 64 samples x 16 channels -> conv(32, k3) -> 64 x 32 -> pool 2 -> 32 x 32
        net = NetworkSpec(64, (LayerSpec.conv1d(32, 3, 2), LayerSpec.lstm(8), LayerSpec.dense(1)),
                          input_channels=16)
        conv, lstm, dense = infer_geometry(net)
        assert (conv.n_in, conv.n_out, conv.seq_len, conv.out_seq_len) == (48, 32, 64, 32)
        assert (lstm.in_features, lstm.seq_len, lstm.n_in, lstm.n_out) == (32, 32, 32, 32)
        # LSTM passes the whole sequence; the first dense flattens 32 x 8
        assert (dense.n_in, dense.n_out, dense.seq_len) == (256, 1, 1)

    def test_dense_stack_keeps_seq_one(self):
        net = NetworkSpec(10, (LayerSpec.conv1d(4, 3, 2), LayerSpec.dense(7), LayerSpec.dense(3)))
        _, d1, d2 = infer_geometry(net)
        assert (d1.n_in, d2.n_in, d2.seq_len) == (20, 7, 1)

    def test_pool_collapse_rejected(self):
        net = NetworkSpec(3, (LayerSpec.conv1d(4, 3, 2), LayerSpec.conv1d(4, 3, 2), LayerSpec.dense(1)))
        with pytest.raises(GeometryError, match="layer 1"):
            infer_geometry(net)


class TestWorkload:
    """Per-layer maxima of the targeted network family."""

    def test_conv_cap(self):
        net = NetworkSpec(512, (LayerSpec.conv1d(256, 3, 1), LayerSpec.dense(1)), input_channels=256)
        g = infer_geometry(net)[0]
        assert workload(g, net.layers[0]) == 100_663_296

    def test_lstm_cap(self):
        net = NetworkSpec(512, (LayerSpec.lstm(425), LayerSpec.dense(1)), input_channels=256)
        g = infer_geometry(net)[0]
        assert workload(g, net.layers[0]) == (512 * 256 + 425) * (4 * 425) == 223_544_900

    def test_dense_cap(self):
        net = NetworkSpec(512, (LayerSpec.lstm(425), LayerSpec.dense(512)), input_channels=256)
        g = infer_geometry(net)[1]
        assert g.n_in == 512 * 425
        assert workload(g) == 111_411_200

    def test_unit_dense(self):
        assert workload(dense_geom(1, 1)) == 1

    def test_network_sum(self):
        net = NetworkSpec(64, (LayerSpec.conv1d(32, 3, 2), LayerSpec.lstm(8), LayerSpec.dense(1)),
                          input_channels=16)
        # 64*3*16*32 + (32*32 + 8)*32 + 256*1
        assert network_workload(net) == 98304 + 33024 + 256


class TestReuseFactors:
    @pytest.mark.parametrize("n_in,n_out,expected", [
        (2, 3, [1, 2, 3, 6]), (1, 1, [1]), (4, 4, [1, 2, 4, 8, 16])])
    def test_valid_examples(self, n_in, n_out, expected):
        assert valid_reuse_factors(dense_geom(n_in, n_out)) == expected

    @given(geoms)
    def test_valid_matches_oracle(self, g):
        assert valid_reuse_factors(g) == divisors_oracle(g.n_in * g.n_out)

    @pytest.mark.parametrize("n_in,n_out,r,expected", [(16, 48, 1, 768), (16, 48, 48, 16), (24, 32, 768, 1)])
    def test_block_factor_examples(self, n_in, n_out, r, expected):
        assert block_factor(dense_geom(n_in, n_out), r) == expected

    def test_block_factor_invalid_names_layer(self):
        with pytest.raises(ReuseFactorError, match="layer 3"):
            block_factor(dense_geom(2, 3), 4, layer=3)

    @given(geoms)
    def test_block_factor_properties(self, g):
        rfs = valid_reuse_factors(g)
        bfs = [block_factor(g, r) for r in rfs]
        assert all(r * b == g.n_in * g.n_out for r, b in zip(rfs, bfs))
        assert bfs == sorted(bfs, reverse=True)
        assert bfs[0] == g.n_in * g.n_out and bfs[-1] == 1

    @pytest.mark.parametrize("n_in,n_out,raw,expected", [(2, 3, 4, 3), (16, 48, 512, 384), (5, 7, 1, 1)])
    def test_correct_examples(self, n_in, n_out, raw, expected):
        assert correct_reuse_factor(dense_geom(n_in, n_out), raw) == expected

    @given(geoms, st.integers(1, 5000))
    def test_correct_is_largest_valid_below(self, g, raw):
        r = correct_reuse_factor(g, raw)
        assert max(d for d in divisors_oracle(g.n_in * g.n_out) if d <= raw) == r
        assert correct_reuse_factor(g, r) == r  # idempotent

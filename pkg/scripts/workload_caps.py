"""Print the per-layer multiply counts of the largest layers the search space allows."""

from hlsdeploy.layers import LayerSpec, NetworkSpec, infer_geometry, workload


def main():
    cases = {
        "conv1d 256ch k3, 512 x 256 input": NetworkSpec(
            512, (LayerSpec.conv1d(256, 3, 1), LayerSpec.dense(1)), input_channels=256),
        "lstm 425 units, 512 x 256 input": NetworkSpec(
            512, (LayerSpec.lstm(425), LayerSpec.dense(1)), input_channels=256),
        "dense 512 after lstm 425 x 512": NetworkSpec(
            512, (LayerSpec.lstm(425), LayerSpec.dense(512)), input_channels=256),
    }
    for name, net in cases.items():
        geoms = infer_geometry(net)
        g, layer = (geoms[1], net.layers[1]) if name.startswith("dense") else (geoms[0], net.layers[0])
        print(f"{name:36s} n_in={g.n_in:<8d} n_out={g.n_out:<5d} multiplies={workload(g, layer):,}")


if __name__ == "__main__":
    main()

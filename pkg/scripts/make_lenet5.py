"""Regenerate the bundled LeNet-5 descriptor (seeded synthetic weights).

The network is the classical 32x32 LeNet-5 with 4-bit weights and 4-bit
activations.  Weights are He-initialised random values, not trained ones;
threshold tables are placed at per-channel quantiles of the accumulators seen
on random input codes so every activation level is reachable.

    python scripts/make_lenet5.py [--out src/foldsparse/data/lenet5]
"""

import argparse
from pathlib import Path

import numpy as np

from foldsparse.model import LayerKind, LayerNode, build_model, infer_shapes, save_model
from foldsparse.quant import run_inference

BITS = 4
SEED = 5

ARCH = [
    dict(id="conv1", kind=LayerKind.CONV2D, kernel=(5, 5), stride=(1, 1), out_channels=6),
    dict(id="thr1", kind=LayerKind.THRESHOLD),
    dict(id="pool1", kind=LayerKind.MAXPOOL2D, kernel=(2, 2), stride=(2, 2)),
    dict(id="conv2", kind=LayerKind.CONV2D, kernel=(5, 5), stride=(1, 1), out_channels=16),
    dict(id="thr2", kind=LayerKind.THRESHOLD),
    dict(id="pool2", kind=LayerKind.MAXPOOL2D, kernel=(2, 2), stride=(2, 2)),
    dict(id="fc1", kind=LayerKind.FULLY_CONNECTED, out_features=120),
    dict(id="thr3", kind=LayerKind.THRESHOLD),
    dict(id="fc2", kind=LayerKind.FULLY_CONNECTED, out_features=84),
    dict(id="thr4", kind=LayerKind.THRESHOLD),
    dict(id="fc3", kind=LayerKind.FULLY_CONNECTED, out_features=10),
]


def _strictly_increasing(row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=np.int64).copy()
    for i in range(1, row.size):
        row[i] = max(row[i], row[i - 1] + 1)
    return row


def build(seed: int = SEED):
    rng = np.random.default_rng(seed)
    input_shape = (1, 32, 32)
    probes = rng.integers(0, 2**BITS, size=(64,) + input_shape)
    layers, weights, thresholds = [], {}, {}
    shape = input_shape
    for spec in ARCH:
        node = infer_shapes(shape, [LayerNode(weight_bits=BITS, act_bits=BITS, **spec)])[0]
        if node.is_weighted:
            w = rng.normal(scale=np.sqrt(2.0 / node.fan_in), size=(node.fan_out, node.fan_in))
            weights[node.id] = w.astype(np.float32).astype(np.float64)
            scale = float(np.float32(3 * w.std() / (2 ** (BITS - 1) - 1)))
            node = LayerNode(**{**node.__dict__, "weight_scale": scale, "prunable": True})
        layers.append(node)
        if node.kind is LayerKind.THRESHOLD:
            # place thresholds at quantiles of the accumulators feeding this layer
            partial = build_model("probe", input_shape, layers[:-1], weights, thresholds)
            accs = np.stack([run_inference(partial, None, None, x, trace=True)[-1] for x in probes])
            accs = accs.reshape(len(probes), node.channels, -1).transpose(1, 0, 2).reshape(node.channels, -1)
            qs = np.linspace(0, 1, 2**BITS + 1)[1:-1]
            thresholds[node.id] = np.stack(
                [_strictly_increasing(np.floor(np.quantile(a, qs))) for a in accs]
            )
        shape = node.output_shape
    return build_model(
        "lenet5",
        input_shape,
        layers,
        weights,
        thresholds,
        metadata={
            "source": "synthetic seeded weights (scripts/make_lenet5.py)",
            "seed": seed,
            "input": "MNIST digits padded to 32x32, 4-bit codes",
        },
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    default_out = Path(__file__).resolve().parents[1] / "src" / "foldsparse" / "data" / "lenet5"
    parser.add_argument("--out", type=Path, default=default_out)
    parser.add_argument("--seed", type=int, default=SEED)
    args = parser.parse_args()
    model = build(args.seed)
    save_model(model, args.out / "lenet5.json")
    print(f"wrote {args.out / 'lenet5.json'}")


if __name__ == "__main__":
    main()

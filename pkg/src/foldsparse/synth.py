"""Seeded random models and inputs for property tests and experiment scripts."""

from __future__ import annotations

import numpy as np

from .model import LayerKind, LayerNode, ModelGraph, build_model, infer_shapes


def random_thresholds(rng: np.random.Generator, channels: int, act_bits: int, spread: int = 40) -> np.ndarray:
    levels = 2**act_bits - 1
    steps = rng.integers(1, 6, size=(channels, levels))
    start = rng.integers(-spread, spread, size=(channels, 1))
    return start + np.cumsum(steps, axis=1)


def random_fc_chain(
    rng: np.random.Generator,
    n_layers: int | None = None,
    max_dim: int = 16,
    bits: tuple[int, int] = (1, 8),
    name: str = "fc-chain",
) -> ModelGraph:
    """Chain of FullyConnected layers, every layer prunable, dims in [1, max_dim]."""
    if n_layers is None:
        n_layers = int(rng.integers(1, 5))
    dims = [int(d) for d in rng.integers(1, max_dim + 1, size=n_layers + 1)]
    layers, weights = [], {}
    for i in range(n_layers):
        lid = f"fc{i}"
        layers.append(
            LayerNode(
                id=lid,
                kind=LayerKind.FULLY_CONNECTED,
                weight_bits=int(rng.integers(bits[0], bits[1] + 1)),
                act_bits=int(rng.integers(bits[0], bits[1] + 1)),
                out_features=dims[i + 1],
                weight_scale=0.05,
                prunable=True,
            )
        )
        weights[lid] = rng.normal(size=(dims[i + 1], dims[i]))
    return build_model(name, (dims[0],), layers, weights)


def random_small_model(rng: np.random.Generator, max_layers: int = 3, max_dim: int = 8) -> ModelGraph:
    """Mixed Conv/Pool/Threshold/FC chain with every dimension at most ``max_dim``."""
    n_layers = int(rng.integers(1, max_layers + 1))
    act_bits = int(rng.integers(1, 4))
    shape: tuple[int, ...] = (
        int(rng.integers(1, 4)),
        int(rng.integers(2, max_dim + 1)),
        int(rng.integers(2, max_dim + 1)),
    )
    input_shape = shape
    layers, weights, thresholds = [], {}, {}
    for i in range(n_layers):
        lid = f"l{i}"
        choices = [LayerKind.FULLY_CONNECTED, LayerKind.THRESHOLD]
        if len(shape) == 3:
            choices += [LayerKind.CONV2D, LayerKind.MAXPOOL2D]
        kind = choices[int(rng.integers(len(choices)))]
        kw: dict = dict(id=lid, kind=kind, weight_bits=int(rng.integers(2, 6)), act_bits=act_bits)
        if kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D):
            kh = int(rng.integers(1, shape[1] + 1))
            kwd = int(rng.integers(1, shape[2] + 1))
            kw["kernel"] = (kh, kwd)
            kw["stride"] = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        if kind is LayerKind.CONV2D:
            kw["out_channels"] = int(rng.integers(1, max_dim + 1))
        if kind is LayerKind.FULLY_CONNECTED:
            kw["out_features"] = int(rng.integers(1, max_dim + 1))
        if kind in (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED):
            kw["weight_scale"] = float(rng.choice([0.1, 0.25, 0.5]))
            kw["prunable"] = True
            if rng.random() < 0.3:
                n_out = kw.get("out_channels") or kw["out_features"]
                kw["bias"] = tuple(int(b) for b in rng.integers(-5, 6, size=n_out))
        node = infer_shapes(shape, [LayerNode(**kw)])[0]
        if node.is_weighted:
            weights[lid] = rng.normal(scale=1.0, size=(node.fan_out, node.fan_in))
        if kind is LayerKind.THRESHOLD:
            rows = 1 if rng.random() < 0.3 else node.channels
            thresholds[lid] = random_thresholds(rng, rows, act_bits, spread=10)
        layers.append(node)
        shape = node.output_shape
    return build_model("random-small", input_shape, layers, weights, thresholds)


def random_input(rng: np.random.Generator, model: ModelGraph, act_bits: int | None = None) -> np.ndarray:
    if act_bits is None:
        act_bits = model.layers[0].act_bits
    return rng.integers(0, 2**act_bits, size=model.input_shape)


def random_mask(rng: np.random.Generator, model: ModelGraph, density: float) -> dict[str, np.ndarray]:
    return {
        layer.id: rng.random((layer.fan_out, layer.fan_in)) < density for layer in model.weighted_layers
    }


def oracle_gap_case(rng: np.random.Generator):
    """One (model, target sparsity, LUT limit) draw for optimality-gap studies.

    FC chains of 1-4 layers with dims <= 16; the LUT limit lies between the
    all-ones and the dense full-unroll cost, skewed towards tight budgets.
    """
    from .cost import all_ones_config, estimate, unrolled_dense_config

    model = random_fc_chain(rng, max_dim=16, bits=(2, 8))
    sparsity = float(rng.choice([0.0, 0.3, 0.5, 0.7, 0.85, 0.95]))
    lo = estimate(model, all_ones_config(model)).total_luts
    hi = estimate(model, unrolled_dense_config(model)).total_luts
    return model, sparsity, float(lo + rng.random() ** 2 * (hi - lo))

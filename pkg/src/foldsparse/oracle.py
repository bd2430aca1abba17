"""Reference implementations used to check the heuristic search and the simulator."""

from __future__ import annotations

import math

import numpy as np

from .cost import (
    CostCoefficients,
    CostEstimate,
    FoldingConfig,
    LayerFold,
    Mode,
    divisors,
    estimate,
    layer_cycles,
    layer_luts,
)
from .dse import Budget, sparse_eligible
from .errors import SearchSpaceTooLarge, ShapeError
from .model import LayerKind, ModelGraph

MAX_SEARCH_SPACE = 10**7


def layer_options(layer, profile) -> list[LayerFold]:
    """Strict-divisor folds in (pe, simd) order, then UnrolledSparse when eligible."""
    opts = [
        LayerFold(Mode.FOLDED, pe, simd)
        for pe in divisors(layer.fan_out)
        for simd in divisors(layer.fan_in)
    ]
    if sparse_eligible(layer, profile):
        opts.append(LayerFold(Mode.UNROLLED_SPARSE, layer.fan_out, layer.fan_in))
    return opts


def search_space_size(model: ModelGraph, profile) -> int:
    return math.prod(len(layer_options(layer, profile)) for layer in model.weighted_layers)


def exhaustive_best_config(
    model: ModelGraph,
    profile,
    budget: Budget,
    coeffs: CostCoefficients = CostCoefficients(),
    clock_mhz: float | None = None,
) -> tuple[FoldingConfig, CostEstimate] | None:
    """Enumerate every strict-divisor / sparse config and keep the fastest in budget.

    Ties go to fewer LUTs, then to the first config in enumeration order.
    Returns None when no config fits.
    """
    weighted = model.weighted_layers
    options = [layer_options(layer, profile) for layer in weighted]
    size = math.prod(len(o) for o in options)
    if size > MAX_SEARCH_SPACE:
        raise SearchSpaceTooLarge(f"{size} configurations exceed the oracle limit of {MAX_SEARCH_SPACE}")

    fixed_cycles = max((layer_cycles(l) for l in model.layers if not l.is_weighted), default=0)
    fixed_luts = sum(layer_luts(l, coeffs=coeffs) for l in model.layers if not l.is_weighted)
    ii = np.array([fixed_cycles], dtype=np.int64)
    luts = np.array([fixed_luts], dtype=np.float64)
    for layer, opts in zip(weighted, options):
        c = np.array([layer_cycles(layer, o) for o in opts], dtype=np.int64)
        l = np.array([layer_luts(layer, o, profile, coeffs) for o in opts], dtype=np.float64)
        ii = np.maximum.outer(ii, c).ravel()
        luts = np.add.outer(luts, l).ravel()

    feasible = np.flatnonzero(luts <= budget.max_luts)
    if feasible.size == 0:
        return None
    order = np.lexsort((feasible, luts[feasible], ii[feasible]))
    flat = int(feasible[order[0]])
    picks = np.unravel_index(flat, [len(o) for o in options]) if options else ()
    entries = {layer.id: opts[int(i)] for layer, opts, i in zip(weighted, options, picks)}
    kwargs = {} if clock_mhz is None else {"clock_mhz": clock_mhz}
    cfg = FoldingConfig(entries, **kwargs)
    return cfg, estimate(model, cfg, profile, coeffs)


# ---------------------------------------------------------------- naive simulator


def _round_half_even(x: float) -> int:
    return round(x)


def naive_inference_reference(model: ModelGraph, masks, specs, input) -> list[int]:
    """Plain nested loops over Python ints; deliberately shares no code with quant."""
    shape = tuple(np.shape(input))
    if shape != tuple(model.input_shape):
        raise ShapeError(f"input shape {shape} != model input {tuple(model.input_shape)}")
    x = np.asarray(input).tolist()
    per_layer = getattr(masks, "per_layer", masks) or {}

    for layer in model.layers:
        if layer.kind in (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED):
            spec = specs[layer.id]
            lo, hi = -(2 ** (spec.weight_bits - 1)), 2 ** (spec.weight_bits - 1) - 1
            raw = model.weights(layer).tolist()
            mask = per_layer.get(layer.id)
            mask = getattr(mask, "mask", mask)
            mask = None if mask is None else np.asarray(mask).reshape(layer.fan_out, layer.fan_in).tolist()
            w = []
            for o in range(layer.fan_out):
                row = []
                for i in range(layer.fan_in):
                    q = min(hi, max(lo, _round_half_even(raw[o][i] / spec.weight_scale)))
                    if mask is not None and not mask[o][i]:
                        q = 0
                    row.append(q)
                w.append(row)
            bias = layer.bias or [0] * layer.fan_out
            if layer.kind is LayerKind.FULLY_CONNECTED:
                flat = []
                _flatten(x, flat)
                x = [bias[o] + sum(w[o][i] * flat[i] for i in range(layer.fan_in)) for o in range(layer.fan_out)]
            else:
                c_in = layer.input_shape[0]
                kh, kw = layer.kernel
                sh, sw = layer.stride
                _, oh, ow = layer.output_shape
                out = []
                for o in range(layer.fan_out):
                    plane = []
                    for r in range(oh):
                        line = []
                        for s in range(ow):
                            acc = bias[o]
                            for c in range(c_in):
                                for i in range(kh):
                                    for j in range(kw):
                                        acc += w[o][(c * kh + i) * kw + j] * x[c][r * sh + i][s * sw + j]
                            line.append(acc)
                        plane.append(line)
                    out.append(plane)
                x = out
        elif layer.kind is LayerKind.MAXPOOL2D:
            kh, kw = layer.kernel
            sh, sw = layer.stride
            c_n, oh, ow = layer.output_shape
            x = [
                [
                    [
                        max(x[c][r * sh + i][s * sw + j] for i in range(kh) for j in range(kw))
                        for s in range(ow)
                    ]
                    for r in range(oh)
                ]
                for c in range(c_n)
            ]
        else:
            table = model.thresholds(layer).tolist()
            x = [_threshold_nested(x[c], table[c] if len(table) > 1 else table[0]) for c in range(len(x))]
    flat = []
    _flatten(x, flat)
    return flat


def _flatten(x, out: list) -> None:
    if isinstance(x, list):
        for item in x:
            _flatten(item, out)
    else:
        out.append(x)


def _threshold_nested(x, thresholds):
    if isinstance(x, list):
        return [_threshold_nested(v, thresholds) for v in x]
    count = 0
    for t in thresholds:
        if t <= x:
            count += 1
    return count

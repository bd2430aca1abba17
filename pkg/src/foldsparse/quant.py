"""Uniform weight quantization and bit-exact integer inference.

Weights use a symmetric per-layer scale with round-half-to-even and saturate
to the signed ``weight_bits`` range.  Activations are unsigned codes produced
by multi-threshold layers; inputs are codes supplied by the caller.
Accumulators are int64, which is exact for every legal bitwidth/fan-in this
toolchain models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingQuantSpec, ParseError, ShapeError
from .model import LayerKind, LayerNode, ModelGraph


@dataclass(frozen=True)
class QuantSpec:
    weight_bits: int
    act_bits: int
    weight_scale: float
    rounding: str = "RoundHalfToEven"

    def __post_init__(self):
        if not self.weight_scale > 0:
            raise ValueError(f"weight_scale must be positive, got {self.weight_scale}")

    @property
    def qmin(self) -> int:
        return -(2 ** (self.weight_bits - 1))

    @property
    def qmax(self) -> int:
        return 2 ** (self.weight_bits - 1) - 1


def quant_specs(model: ModelGraph) -> dict[str, QuantSpec]:
    """QuantSpecs for every weighted layer that declares a ``weight_scale``."""
    return {
        layer.id: QuantSpec(layer.weight_bits, layer.act_bits, layer.weight_scale)
        for layer in model.weighted_layers
        if layer.weight_scale is not None
    }


def quantize_weights(tensor, spec: QuantSpec) -> np.ndarray:
    q = np.rint(np.asarray(tensor, dtype=np.float64) / spec.weight_scale)
    return np.clip(q, spec.qmin, spec.qmax).astype(np.int64)


def apply_thresholds(acc, thresholds) -> int | np.ndarray:
    """Number of thresholds ``<= acc`` (vectorised over ``acc`` when it is an array)."""
    thresholds = np.asarray(thresholds)
    idx = np.searchsorted(thresholds, acc, side="right")
    return int(idx) if np.ndim(idx) == 0 else idx.astype(np.int64)


def _spec_for(layer: LayerNode, specs: Mapping[str, QuantSpec]) -> QuantSpec:
    try:
        return specs[layer.id]
    except KeyError:
        raise MissingQuantSpec(f"layer {layer.id!r} has no quantization spec (weight_scale)") from None


def effective_weights(model: ModelGraph, layer: LayerNode, masks, specs) -> np.ndarray:
    """Quantized ``(fan_out, fan_in)`` integer matrix with pruned entries forced to 0."""
    q = quantize_weights(model.weights(layer), _spec_for(layer, specs))
    if masks is not None:
        mask = _mask_for(masks, layer.id)
        if mask is not None:
            q = np.where(mask.reshape(q.shape), q, 0)
    return q


def _mask_for(masks, layer_id: str):
    # accepts a SparsityProfile or a plain {layer_id: bool array} mapping
    per_layer = getattr(masks, "per_layer", masks)
    entry = per_layer.get(layer_id)
    if entry is None:
        return None
    return getattr(entry, "mask", entry)


def im2col(x: np.ndarray, kernel: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """``(C, H, W)`` -> ``(out_h * out_w, C * kh * kw)`` patch matrix, rows in raster order."""
    kh, kw = kernel
    sh, sw = stride
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    c, oh, ow = win.shape[:3]
    return win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)


def _layer_forward(model: ModelGraph, layer: LayerNode, x: np.ndarray, masks, specs) -> np.ndarray:
    kind = layer.kind
    if kind is LayerKind.CONV2D:
        w = effective_weights(model, layer, masks, specs)
        acc = im2col(x, layer.kernel, layer.stride) @ w.T
        if layer.bias is not None:
            acc = acc + np.asarray(layer.bias, dtype=np.int64)
        _, oh, ow = layer.output_shape
        return acc.T.reshape(layer.fan_out, oh, ow)
    if kind is LayerKind.FULLY_CONNECTED:
        w = effective_weights(model, layer, masks, specs)
        acc = w @ x.reshape(-1)
        if layer.bias is not None:
            acc = acc + np.asarray(layer.bias, dtype=np.int64)
        return acc
    if kind is LayerKind.MAXPOOL2D:
        win = sliding_window_view(x, layer.kernel, axis=(1, 2))[:, :: layer.stride[0], :: layer.stride[1]]
        return win.max(axis=(3, 4))
    # Threshold
    if layer.thresholds_ref is None:
        raise MissingQuantSpec(f"layer {layer.id!r}: Threshold layer has no thresholds")
    table = model.thresholds(layer)
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        out[c] = apply_thresholds(x[c], table[c if table.shape[0] > 1 else 0])
    return out


def run_inference(
    model: ModelGraph,
    masks=None,
    specs: Mapping[str, QuantSpec] | None = None,
    input=None,
    trace: bool = False,
):
    """Evaluate the integer network on one input.

    ``masks`` may be a SparsityProfile, a ``{layer_id: mask}`` mapping or None.
    With ``trace=True`` the list of every layer's output is returned instead of
    only the last one; weighted-layer outputs are the pre-threshold accumulators.
    """
    if specs is None:
        specs = quant_specs(model)
    x = np.asarray(input)
    if x.shape != tuple(model.input_shape):
        raise ShapeError(f"input shape {x.shape} != model input {tuple(model.input_shape)}")
    x = x.astype(np.int64)
    outputs = []
    for layer in model.layers:
        x = _layer_forward(model, layer, x, masks, specs)
        outputs.append(x)
    if trace:
        return outputs
    return x.reshape(-1)


def argmax_lowest(vector) -> int:
    # np.argmax already returns the first maximal index
    return int(np.argmax(np.asarray(vector)))


@dataclass(frozen=True)
class Sample:
    input: np.ndarray
    label: int


def evaluate_accuracy(
    model: ModelGraph, masks, specs, testset: Sequence[Sample] | Iterable[tuple]
) -> float:
    samples = [s if isinstance(s, Sample) else Sample(np.asarray(s[0]), int(s[1])) for s in testset]
    if not samples:
        raise ValueError("testset is empty")
    correct = sum(
        argmax_lowest(run_inference(model, masks, specs, s.input)) == s.label for s in samples
    )
    return correct / len(samples)


def load_testset(path: str | Path) -> list[Sample]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return [Sample(np.asarray(item["input"], dtype=np.int64), int(item["label"])) for item in doc]
    except OSError as exc:
        raise ParseError(f"cannot read testset {path}: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed testset: {exc}") from None


def save_testset(samples: Sequence[Sample], path: str | Path) -> None:
    doc = [{"input": np.asarray(s.input).tolist(), "label": int(s.label)} for s in samples]
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

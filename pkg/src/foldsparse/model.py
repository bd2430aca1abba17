"""Linear-chain network IR, JSON descriptor I/O, validation and shape inference.

Weights are kept as real values (float64, shape ``(fan_out, fan_in)``);
quantization happens later in :mod:`foldsparse.quant`.  Convolution weight
rows are flattened in ``(in_channel, kh, kw)`` order.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ParseError, ShapeError, ValidationError

Shape = tuple[int, ...]

# Keys that share the top level of a folding-config file with layer ids.
RESERVED_IDS = frozenset({"clock_mhz", "strict", "model_checksum"})


class LayerKind(str, enum.Enum):
    CONV2D = "Conv2D"
    FULLY_CONNECTED = "FullyConnected"
    MAXPOOL2D = "MaxPool2D"
    THRESHOLD = "Threshold"


WEIGHTED_KINDS = (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED)


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: LayerKind
    weight_bits: int
    act_bits: int
    input_shape: Shape | None = None
    output_shape: Shape | None = None
    kernel: tuple[int, int] | None = None
    stride: tuple[int, int] | None = None
    out_channels: int | None = None
    out_features: int | None = None
    weights_ref: str | None = None
    thresholds_ref: str | None = None
    weight_scale: float | None = None
    bias: tuple[int, ...] | None = None
    prunable: bool = False

    @property
    def is_weighted(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    @property
    def fan_in(self) -> int:
        if self.kind is LayerKind.CONV2D:
            return self.kernel[0] * self.kernel[1] * self.input_shape[0]
        if self.kind is LayerKind.FULLY_CONNECTED:
            return math.prod(self.input_shape)
        raise ValueError(f"layer {self.id!r} ({self.kind.value}) has no fan_in")

    @property
    def fan_out(self) -> int:
        if self.kind is LayerKind.CONV2D:
            return self.out_channels
        if self.kind is LayerKind.FULLY_CONNECTED:
            return self.out_features
        raise ValueError(f"layer {self.id!r} ({self.kind.value}) has no fan_out")

    @property
    def channels(self) -> int:
        """Channel count seen by pooling/threshold logic (features for vectors)."""
        return self.output_shape[0]

    @property
    def out_pixels(self) -> int:
        """Spatial positions of the output; 1 for vector shapes."""
        if len(self.output_shape) == 3:
            return self.output_shape[1] * self.output_shape[2]
        return 1


@dataclass(frozen=True)
class ModelGraph:
    name: str
    input_shape: Shape
    layers: tuple[LayerNode, ...]
    weight_store: Mapping[str, np.ndarray] = field(default_factory=dict)
    threshold_store: Mapping[str, np.ndarray] = field(default_factory=dict)
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        validate_model(self)

    def layer(self, layer_id: str) -> LayerNode:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def index(self, layer_id: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.id == layer_id:
                return i
        raise KeyError(layer_id)

    def weights(self, layer: LayerNode | str) -> np.ndarray:
        if isinstance(layer, str):
            layer = self.layer(layer)
        return self.weight_store[layer.weights_ref]

    def thresholds(self, layer: LayerNode | str) -> np.ndarray:
        if isinstance(layer, str):
            layer = self.layer(layer)
        return self.threshold_store[layer.thresholds_ref]

    @property
    def weighted_layers(self) -> list[LayerNode]:
        return [layer for layer in self.layers if layer.is_weighted]

    @property
    def output_shape(self) -> Shape:
        return self.layers[-1].output_shape


def _pair(value, what: str, layer_id: str) -> tuple[int, int]:
    if isinstance(value, int):
        value = (value, value)
    try:
        a, b = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ParseError(f"layer {layer_id!r}: bad {what} {value!r}") from None
    if a < 1 or b < 1:
        raise ValidationError(f"layer {layer_id!r}: {what} must be positive, got {value!r}")
    return a, b


def infer_shapes(input_shape: Sequence[int], layers: Sequence[LayerNode]) -> list[LayerNode]:
    """Fill in ``input_shape``/``output_shape`` along the chain.

    Convolution and pooling use ``floor((in - k) / stride) + 1`` (no padding).
    A missing stride defaults to 1 for Conv2D and to the kernel for MaxPool2D.
    """
    shape: Shape = tuple(int(d) for d in input_shape)
    out = []
    for layer in layers:
        kind = layer.kind
        if kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D):
            if len(shape) != 3:
                raise ShapeError(f"layer {layer.id!r}: {kind.value} needs a (C, H, W) input, got {shape}")
            if layer.kernel is None:
                raise ShapeError(f"layer {layer.id!r}: {kind.value} needs a kernel")
            if layer.stride is None:
                # conv defaults to stride 1, pooling to non-overlapping windows
                layer = dataclasses.replace(layer, stride=(1, 1) if kind is LayerKind.CONV2D else layer.kernel)
            (kh, kw), (sh, sw) = layer.kernel, layer.stride
            oh = (shape[1] - kh) // sh + 1
            ow = (shape[2] - kw) // sw + 1
            if shape[1] < kh or shape[2] < kw or oh < 1 or ow < 1:
                raise ShapeError(
                    f"layer {layer.id!r}: kernel {layer.kernel} does not fit input {shape}"
                )
            channels = layer.out_channels if kind is LayerKind.CONV2D else shape[0]
            new_shape = (channels, oh, ow)
        elif kind is LayerKind.FULLY_CONNECTED:
            new_shape = (layer.out_features,)
        else:
            new_shape = shape
        if min(new_shape) < 1:
            raise ShapeError(f"layer {layer.id!r}: computed shape {new_shape} has an empty dimension")
        out.append(dataclasses.replace(layer, input_shape=shape, output_shape=new_shape))
        shape = new_shape
    return out


def validate_model(model: ModelGraph) -> None:
    """Check every ModelGraph invariant; raise ValidationError naming the layer."""
    if not model.layers:
        raise ValidationError("model has no layers")
    seen = set()
    refs_w, refs_t = set(), set()
    prev: LayerNode | None = None
    expected = tuple(model.input_shape)
    for layer in model.layers:
        if layer.id in seen:
            raise ValidationError(f"duplicate layer id {layer.id!r}")
        if layer.id in RESERVED_IDS:
            raise ValidationError(f"layer id {layer.id!r} is reserved")
        seen.add(layer.id)
        for name in ("weight_bits", "act_bits"):
            bits = getattr(layer, name)
            if not 1 <= bits <= 16:
                raise ValidationError(f"layer {layer.id!r}: {name}={bits} outside [1, 16]")
        if layer.input_shape != expected:
            where = f"layer {prev.id!r} output {expected}" if prev else f"model input {expected}"
            raise ValidationError(
                f"shape mismatch: {where} does not match layer {layer.id!r} input {layer.input_shape}"
            )
        recomputed = infer_shapes(expected, [layer])[0].output_shape
        if layer.output_shape != recomputed:
            raise ValidationError(
                f"layer {layer.id!r}: output_shape {layer.output_shape} != inferred {recomputed}"
            )
        if layer.is_weighted:
            if layer.weights_ref is None:
                raise ValidationError(f"layer {layer.id!r}: weighted layer without weights")
            if layer.weights_ref not in model.weight_store:
                raise ValidationError(f"layer {layer.id!r}: dangling weights_ref {layer.weights_ref!r}")
            w = model.weight_store[layer.weights_ref]
            if w.shape != (layer.fan_out, layer.fan_in):
                raise ValidationError(
                    f"layer {layer.id!r}: weight tensor {w.shape} != (fan_out, fan_in) "
                    f"({layer.fan_out}, {layer.fan_in})"
                )
            if layer.bias is not None and len(layer.bias) != layer.fan_out:
                raise ValidationError(f"layer {layer.id!r}: bias length {len(layer.bias)} != {layer.fan_out}")
            refs_w.add(layer.weights_ref)
        elif layer.weights_ref is not None:
            raise ValidationError(f"layer {layer.id!r}: {layer.kind.value} cannot carry weights")
        if layer.prunable and not layer.is_weighted:
            raise ValidationError(f"layer {layer.id!r}: only weighted layers can be prunable")
        if layer.kind is LayerKind.THRESHOLD:
            if layer.thresholds_ref is not None:
                if layer.thresholds_ref not in model.threshold_store:
                    raise ValidationError(
                        f"layer {layer.id!r}: dangling thresholds_ref {layer.thresholds_ref!r}"
                    )
                _check_thresholds(layer, model.threshold_store[layer.thresholds_ref])
                refs_t.add(layer.thresholds_ref)
        elif layer.thresholds_ref is not None:
            raise ValidationError(f"layer {layer.id!r}: only Threshold layers carry thresholds")
        prev = layer
        expected = layer.output_shape
    orphans = (set(model.weight_store) - refs_w) | (set(model.threshold_store) - refs_t)
    if orphans:
        raise ValidationError(f"orphan tensors in store: {sorted(orphans)}")


def _check_thresholds(layer: LayerNode, table: np.ndarray) -> None:
    levels = 2**layer.act_bits - 1
    if table.ndim != 2 or table.shape[1] != levels:
        raise ValidationError(
            f"layer {layer.id!r}: threshold table {table.shape} needs {levels} entries per channel"
        )
    if table.shape[0] not in (1, layer.channels):
        raise ValidationError(
            f"layer {layer.id!r}: {table.shape[0]} threshold rows for {layer.channels} channels"
        )
    if levels > 1 and not np.all(np.diff(table, axis=1) > 0):
        raise ValidationError(f"layer {layer.id!r}: thresholds must be strictly increasing")


# ---------------------------------------------------------------- descriptor I/O


def _read_tensor(spec, base: Path, dtype: str, layer_id: str) -> np.ndarray:
    if isinstance(spec, str):
        if not spec.startswith("file:"):
            raise ParseError(f"layer {layer_id!r}: tensor reference {spec!r} must be inline or 'file:<path>'")
        path = base / spec[len("file:"):]
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise ParseError(f"layer {layer_id!r}: cannot read {path}: {exc}") from None
        if len(raw) % 4:
            raise ParseError(f"layer {layer_id!r}: {path} size is not a multiple of 4 bytes")
        return np.frombuffer(raw, dtype=dtype)
    try:
        return np.asarray(spec, dtype=np.float64 if dtype == "<f4" else np.int64)
    except (TypeError, ValueError):
        raise ParseError(f"layer {layer_id!r}: inline tensor is not a rectangular numeric array") from None


def _parse_layer(raw: Mapping[str, Any], base: Path, prev_shape: Shape, prev_id: str | None):
    try:
        layer_id = str(raw["id"])
        kind = LayerKind(raw["kind"])
    except KeyError as exc:
        raise ParseError(f"layer entry missing {exc.args[0]!r}: {raw!r}") from None
    except ValueError:
        raise ParseError(f"layer {raw.get('id')!r}: unknown kind {raw.get('kind')!r}") from None
    act_bits = int(raw.get("act_bits", 0))
    kwargs: dict[str, Any] = dict(
        id=layer_id,
        kind=kind,
        act_bits=act_bits,
        weight_bits=int(raw.get("weight_bits", act_bits)),
        prunable=bool(raw.get("prunable", False)),
    )
    if kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D):
        if "kernel" not in raw:
            raise ParseError(f"layer {layer_id!r}: {kind.value} needs 'kernel'")
        kernel = _pair(raw["kernel"], "kernel", layer_id)
        default_stride = 1 if kind is LayerKind.CONV2D else kernel
        kwargs["kernel"] = kernel
        kwargs["stride"] = _pair(raw.get("stride", default_stride), "stride", layer_id)
    prev_out = prev_shape[0] if prev_shape else None
    for key, produced in (("in_channels", prev_out), ("in_features", math.prod(prev_shape))):
        if key in raw and int(raw[key]) != produced:
            source = f"layer {prev_id!r}" if prev_id else "model input"
            raise ValidationError(
                f"channel mismatch: {source} produces {produced} but layer "
                f"{layer_id!r} expects {key}={raw[key]}"
            )
    tensors = {}
    if kind is LayerKind.CONV2D:
        kwargs["out_channels"] = int(raw["out_channels"])
    elif kind is LayerKind.FULLY_CONNECTED:
        kwargs["out_features"] = int(raw["out_features"])
    if kind in WEIGHTED_KINDS:
        if "weights" not in raw:
            raise ValidationError(f"layer {layer_id!r}: weighted layer without weights")
        w = _read_tensor(raw["weights"], base, "<f4", layer_id)
        if kind is LayerKind.CONV2D and w.ndim == 4 and w.shape[1] != prev_out:
            raise ValidationError(
                f"channel mismatch: layer {prev_id!r} produces {prev_out} channels but "
                f"layer {layer_id!r} weights expect {w.shape[1]}"
            )
        tensors["weights"] = w.astype(np.float64)
        kwargs["weights_ref"] = layer_id
        if "weight_scale" in raw:
            kwargs["weight_scale"] = float(raw["weight_scale"])
        if "bias" in raw:
            kwargs["bias"] = tuple(int(b) for b in raw["bias"])
    elif "weights" in raw:
        raise ValidationError(f"layer {layer_id!r}: {kind.value} cannot carry weights")
    if kind is LayerKind.THRESHOLD and "thresholds" in raw:
        t = _read_tensor(raw["thresholds"], base, "<i4", layer_id).astype(np.int64)
        tensors["thresholds"] = t
        kwargs["thresholds_ref"] = layer_id
    if "output_shape" in raw:
        kwargs["output_shape"] = tuple(int(d) for d in raw["output_shape"])
    return LayerNode(**kwargs), tensors


def parse_descriptor(doc: Mapping[str, Any], base: Path | str = ".") -> ModelGraph:
    """Build a validated ModelGraph from an already-decoded descriptor document."""
    base = Path(base)
    try:
        name = str(doc["name"])
        input_shape = tuple(int(d) for d in doc["input_shape"])
        raw_layers = list(doc["layers"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"descriptor missing or malformed top-level field: {exc}") from None
    nodes, tensors = [], {}
    prev_id = None
    shape = input_shape
    for raw in raw_layers:
        if not isinstance(raw, dict):
            raise ParseError(f"layer entry must be an object, got {raw!r}")
        node, t = _parse_layer(raw, base, shape, prev_id)
        declared_out = node.output_shape
        node = infer_shapes(shape, [dataclasses.replace(node, output_shape=None)])[0]
        if declared_out is not None and declared_out != node.output_shape:
            raise ValidationError(
                f"layer {node.id!r}: declared output_shape {declared_out} != inferred {node.output_shape}"
            )
        tensors[node.id] = t
        nodes.append(node)
        shape = node.output_shape
        prev_id = node.id

    weight_store, threshold_store = {}, {}
    final = []
    for node in nodes:
        t = tensors[node.id]
        if "weights" in t:
            w = t["weights"]
            expected = node.fan_in * node.fan_out
            if w.size != expected:
                raise ValidationError(
                    f"layer {node.id!r}: {w.size} weights, expected fan_in*fan_out = {expected}"
                )
            w = np.ascontiguousarray(w.reshape(node.fan_out, node.fan_in))
            w.flags.writeable = False
            weight_store[node.weights_ref] = w
        if "thresholds" in t:
            th = t["thresholds"]
            levels = 2**node.act_bits - 1
            if th.ndim == 1:
                if th.size % levels:
                    raise ValidationError(
                        f"layer {node.id!r}: {th.size} thresholds is not a multiple of {levels}"
                    )
                th = th.reshape(-1, levels)
            th.flags.writeable = False
            threshold_store[node.thresholds_ref] = th
        final.append(node)
    return ModelGraph(
        name=name,
        input_shape=input_shape,
        layers=tuple(final),
        weight_store=weight_store,
        threshold_store=threshold_store,
        metadata=dict(doc.get("metadata", {})),
    )


def load_model(descriptor_path: str | Path) -> ModelGraph:
    path = Path(descriptor_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read model descriptor {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: descriptor must be a JSON object")
    return parse_descriptor(doc, path.parent)


def _layer_doc(layer: LayerNode) -> dict[str, Any]:
    doc: dict[str, Any] = {"id": layer.id, "kind": layer.kind.value}
    if layer.kernel is not None:
        doc["kernel"] = list(layer.kernel)
        doc["stride"] = list(layer.stride)
    if layer.out_channels is not None:
        doc["out_channels"] = layer.out_channels
    if layer.out_features is not None:
        doc["out_features"] = layer.out_features
    doc["weight_bits"] = layer.weight_bits
    doc["act_bits"] = layer.act_bits
    doc["prunable"] = layer.prunable
    if layer.weight_scale is not None:
        doc["weight_scale"] = layer.weight_scale
    if layer.bias is not None:
        doc["bias"] = list(layer.bias)
    return doc


def save_model(model: ModelGraph, descriptor_path: str | Path, inline: bool = False) -> None:
    """Write a descriptor; external tensors go next to it as ``<id>.f32``/``<id>.thr.i32``.

    External weight files are float32, so float64 weights lose precision unless
    ``inline`` is set (JSON floats round-trip exactly).
    """
    path = Path(descriptor_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layers = []
    for layer in model.layers:
        doc = _layer_doc(layer)
        if layer.is_weighted:
            w = model.weights(layer)
            if inline:
                doc["weights"] = w.tolist()
            else:
                fname = f"{layer.id}.f32"
                (path.parent / fname).write_bytes(w.astype("<f4").tobytes())
                doc["weights"] = f"file:{fname}"
        if layer.thresholds_ref is not None:
            th = model.thresholds(layer)
            if inline:
                doc["thresholds"] = th.tolist()
            else:
                fname = f"{layer.id}.thr.i32"
                (path.parent / fname).write_bytes(th.astype("<i4").tobytes())
                doc["thresholds"] = f"file:{fname}"
        layers.append(doc)
    out = {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "layers": layers,
        "metadata": dict(model.metadata),
    }
    path.write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")


def checksum_model(model: ModelGraph) -> str:
    """SHA-256 over structure, quantization parameters and tensors; metadata excluded."""
    h = hashlib.sha256()
    structure = {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "layers": [_layer_doc(layer) for layer in model.layers],
    }
    h.update(json.dumps(structure, sort_keys=True).encode())
    for layer in model.layers:
        if layer.is_weighted:
            h.update(model.weights(layer).astype("<f8").tobytes())
        if layer.thresholds_ref is not None:
            h.update(model.thresholds(layer).astype("<i8").tobytes())
    return h.hexdigest()


def build_model(
    name: str,
    input_shape: Sequence[int],
    layers: Sequence[LayerNode],
    weights: Mapping[str, np.ndarray] | None = None,
    thresholds: Mapping[str, np.ndarray] | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> ModelGraph:
    """Programmatic constructor: infers shapes, reshapes weights, wires refs by layer id."""
    weights = dict(weights or {})
    thresholds = dict(thresholds or {})
    nodes = infer_shapes(input_shape, layers)
    wstore, tstore, final = {}, {}, []
    for node in nodes:
        if node.is_weighted:
            w = np.asarray(weights[node.id], dtype=np.float64)
            if w.size != node.fan_out * node.fan_in:
                raise ValidationError(
                    f"layer {node.id!r}: {w.size} weights, expected fan_out*fan_in = {node.fan_out * node.fan_in}"
                )
            w = w.reshape(node.fan_out, node.fan_in)
            w = np.ascontiguousarray(w)
            w.flags.writeable = False
            wstore[node.id] = w
            node = dataclasses.replace(node, weights_ref=node.id)
        if node.id in thresholds:
            t = np.asarray(thresholds[node.id], dtype=np.int64)
            if t.ndim == 1:
                t = t.reshape(1, -1)
            t.flags.writeable = False
            tstore[node.id] = t
            node = dataclasses.replace(node, thresholds_ref=node.id)
        final.append(node)
    return ModelGraph(
        name=name,
        input_shape=tuple(input_shape),
        layers=tuple(final),
        weight_store=wstore,
        threshold_store=tstore,
        metadata=dict(metadata or {}),
    )

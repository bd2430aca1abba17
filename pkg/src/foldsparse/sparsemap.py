"""Static sparse-connection maps for layers deployed as UnrolledSparse.

Each output neuron lists the ``(input index, quantized weight)`` pairs that
survive pruning.  The input index addresses the layer's weight row: the
flattened input vector for FullyConnected, ``(channel, kh, kw)`` for Conv2D.
Weights that survive pruning but quantize to zero are dropped here and
counted, without touching the sparsity profile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cost import FoldingConfig, Mode
from .errors import MissingProfile, MissingQuantSpec, ParseError
from .model import LayerKind, ModelGraph, checksum_model
from .pruning import SparsityProfile
from .quant import QuantSpec, quantize_weights, run_inference


@dataclass(frozen=True)
class LayerSparseMap:
    layer: str
    kind: str
    shape: tuple[int, int]  # (fan_out, fan_in)
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    kernel: tuple[int, int] | None
    stride: tuple[int, int] | None
    weight_bits: int
    neurons: tuple[tuple[int, tuple[tuple[int, int], ...]], ...]
    model_checksum: str
    bias: tuple[int, ...] | None = None
    profile_nnz: int = 0
    quantized_zero_drops: int = 0

    @property
    def connections(self) -> int:
        return sum(len(conns) for _, conns in self.neurons)

    def to_doc(self) -> dict:
        doc = {
            "layer": self.layer,
            "kind": self.kind,
            "shape": list(self.shape),
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "kernel": list(self.kernel) if self.kernel else None,
            "stride": list(self.stride) if self.stride else None,
            "weight_bits": self.weight_bits,
            "profile_nnz": self.profile_nnz,
            "quantized_zero_drops": self.quantized_zero_drops,
            "neurons": [{"out": o, "conns": [[i, q] for i, q in conns]} for o, conns in self.neurons],
            "model_checksum": self.model_checksum,
        }
        if self.bias is not None:
            doc["bias"] = list(self.bias)
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "LayerSparseMap":
        try:
            return cls(
                layer=doc["layer"],
                kind=doc["kind"],
                shape=tuple(doc["shape"]),
                input_shape=tuple(doc["input_shape"]),
                output_shape=tuple(doc["output_shape"]),
                kernel=tuple(doc["kernel"]) if doc.get("kernel") else None,
                stride=tuple(doc["stride"]) if doc.get("stride") else None,
                weight_bits=int(doc["weight_bits"]),
                neurons=tuple(
                    (int(n["out"]), tuple((int(i), int(q)) for i, q in n["conns"])) for n in doc["neurons"]
                ),
                model_checksum=doc["model_checksum"],
                bias=tuple(doc["bias"]) if doc.get("bias") is not None else None,
                profile_nnz=int(doc.get("profile_nnz", 0)),
                quantized_zero_drops=int(doc.get("quantized_zero_drops", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed sparse map: {exc!r}") from None


SparseConnectionMap = dict  # layer id -> LayerSparseMap, in layer order


def export_layer_map(model: ModelGraph, layer_id: str, mask: np.ndarray, spec: QuantSpec, checksum: str) -> LayerSparseMap:
    layer = model.layer(layer_id)
    q = quantize_weights(model.weights(layer), spec)
    mask = np.asarray(mask, dtype=bool).reshape(q.shape)
    neurons = []
    dropped = 0
    for o in range(layer.fan_out):
        kept = np.flatnonzero(mask[o])
        conns = tuple((int(i), int(q[o, i])) for i in kept if q[o, i] != 0)
        dropped += len(kept) - len(conns)
        neurons.append((o, conns))
    return LayerSparseMap(
        layer=layer.id,
        kind=layer.kind.value,
        shape=(layer.fan_out, layer.fan_in),
        input_shape=layer.input_shape,
        output_shape=layer.output_shape,
        kernel=layer.kernel,
        stride=layer.stride,
        weight_bits=layer.weight_bits,
        neurons=tuple(neurons),
        model_checksum=checksum,
        bias=layer.bias,
        profile_nnz=int(mask.sum()),
        quantized_zero_drops=dropped,
    )


def export_sparse_map(
    model: ModelGraph,
    profile: SparsityProfile | None,
    cfg: FoldingConfig,
    specs: Mapping[str, QuantSpec],
) -> SparseConnectionMap:
    checksum = checksum_model(model)
    out: SparseConnectionMap = {}
    for layer in model.weighted_layers:
        if cfg.entry(layer.id).mode is not Mode.UNROLLED_SPARSE:
            continue
        if profile is None or layer.id not in profile.per_layer:
            raise MissingProfile(f"layer {layer.id!r} is UnrolledSparse but the profile has no mask for it")
        if layer.id not in specs:
            raise MissingQuantSpec(f"layer {layer.id!r} has no quantization spec")
        out[layer.id] = export_layer_map(model, layer.id, profile.per_layer[layer.id].mask, specs[layer.id], checksum)
    return out


def map_summary(smap: SparseConnectionMap, checksum: str) -> dict:
    return {
        "model_checksum": checksum,
        "layers": {
            lid: {
                "file": f"{lid}.json",
                "profile_nnz": m.profile_nnz,
                "connections": m.connections,
                "quantized_zero_drops": m.quantized_zero_drops,
            }
            for lid, m in smap.items()
        },
    }


def write_sparse_map(smap: SparseConnectionMap, out_dir: str | Path, checksum: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for lid, m in smap.items():
        (out_dir / f"{lid}.json").write_text(json.dumps(m.to_doc()) + "\n", encoding="utf-8")
    (out_dir / "summary.json").write_text(json.dumps(map_summary(smap, checksum), indent=1) + "\n", encoding="utf-8")


def read_sparse_map(out_dir: str | Path) -> SparseConnectionMap:
    out_dir = Path(out_dir)
    try:
        summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
        return {
            lid: LayerSparseMap.from_doc(json.loads((out_dir / entry["file"]).read_text(encoding="utf-8")))
            for lid, entry in summary["layers"].items()
        }
    except OSError as exc:
        raise ParseError(f"cannot read sparse map in {out_dir}: {exc}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"{out_dir}: malformed sparse map: {exc!r}") from None


# ---------------------------------------------------------------- verification


def _patches(x: np.ndarray, m: LayerSparseMap) -> np.ndarray:
    if m.kind == LayerKind.FULLY_CONNECTED.value:
        return x.reshape(1, -1)
    kh, kw = m.kernel
    sh, sw = m.stride
    _, oh, ow = m.output_shape
    rows = []
    for r in range(oh):
        for s in range(ow):
            rows.append(x[:, r * sh : r * sh + kh, s * sw : s * sw + kw].reshape(-1))
    return np.stack(rows)


def evaluate_layer_map(m: LayerSparseMap, x: np.ndarray) -> np.ndarray:
    """Accumulators ``(fan_out, pixels)`` computed only from the map's connections."""
    patches = _patches(np.asarray(x, dtype=np.int64), m)
    acc = np.zeros((m.shape[0], patches.shape[0]), dtype=np.int64)
    for o, conns in m.neurons:
        for i, q in conns:
            acc[o] += q * patches[:, i]
    if m.bias is not None:
        acc += np.asarray(m.bias, dtype=np.int64)[:, None]
    return acc


@dataclass(frozen=True)
class VerifyResult:
    passed: bool
    checked_inputs: int
    detail: str = ""

    def __bool__(self) -> bool:
        return self.passed


def verify_map_against_inference(
    smap: SparseConnectionMap,
    model: ModelGraph,
    profile: SparsityProfile,
    specs: Mapping[str, QuantSpec],
    inputs: Sequence[np.ndarray],
) -> VerifyResult:
    """Map-only accumulators must equal the simulator's pre-threshold accumulators."""
    if not smap:
        return VerifyResult(True, 0, "no sparse layers")
    masks = {lid: profile.per_layer[lid].mask for lid in smap}
    for n, x in enumerate(inputs):
        trace = run_inference(model, masks, specs, x, trace=True)
        for lid, m in smap.items():
            idx = model.index(lid)
            layer_in = np.asarray(x) if idx == 0 else trace[idx - 1]
            got = evaluate_layer_map(m, layer_in)
            want = trace[idx].reshape(m.shape[0], -1)
            if not np.array_equal(got, want):
                bad = np.argwhere(got != want)[0]
                return VerifyResult(
                    False,
                    n + 1,
                    f"layer {lid!r} neuron {int(bad[0])} position {int(bad[1])}: map gives "
                    f"{int(got[tuple(bad)])}, inference gives {int(want[tuple(bad)])} (input #{n})",
                )
    return VerifyResult(True, len(inputs))

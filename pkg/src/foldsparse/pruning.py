"""Global magnitude pruning with an exact pruned count, and compression accounting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Mapping

import numpy as np

from .errors import ChecksumMismatch, NoPrunableLayers, ParseError, ValidationError
from .model import ModelGraph, checksum_model

FULL_PRECISION_BITS = 32


@dataclass(frozen=True)
class LayerMask:
    mask: np.ndarray  # bool, shaped like the layer's (fan_out, fan_in) weights

    @property
    def total(self) -> int:
        return int(self.mask.size)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def density(self) -> float:
        return self.nnz / self.total


@dataclass(frozen=True)
class SparsityProfile:
    global_threshold: float
    target_sparsity: float
    per_layer: Mapping[str, LayerMask]

    def nnz(self, layer_id: str) -> int:
        return self.per_layer[layer_id].nnz

    def is_sparse(self, layer_id: str) -> bool:
        entry = self.per_layer.get(layer_id)
        return entry is not None and entry.nnz < entry.total


def global_magnitude_prune(model: ModelGraph, target_sparsity: float) -> SparsityProfile:
    """Mask the ``floor(target * N)`` smallest magnitudes across all prunable layers.

    Magnitude ties are broken by (layer order, flat index), so the pruned count
    is exact and masks are nested as the target grows.
    """
    if not 0 <= target_sparsity < 1:
        raise ValueError(f"target_sparsity must lie in [0, 1), got {target_sparsity}")
    prunable = [layer for layer in model.weighted_layers if layer.prunable]
    if not prunable:
        raise NoPrunableLayers(f"model {model.name!r} has no prunable layers")

    mags = np.concatenate([np.abs(model.weights(layer)).ravel() for layer in prunable])
    layer_pos = np.concatenate(
        [np.full(model.weights(layer).size, i) for i, layer in enumerate(prunable)]
    )
    flat_idx = np.concatenate([np.arange(model.weights(layer).size) for layer in prunable])
    n = mags.size
    k = math.floor(target_sparsity * n)
    # lexsort: last key is primary
    order = np.lexsort((flat_idx, layer_pos, mags))
    keep = np.ones(n, dtype=bool)
    keep[order[:k]] = False
    threshold = float(mags[order[k - 1]]) if k > 0 else 0.0

    per_layer: dict[str, LayerMask] = {}
    offset = 0
    for layer in model.weighted_layers:
        shape = model.weights(layer).shape
        if layer.prunable:
            size = math.prod(shape)
            mask = keep[offset : offset + size].reshape(shape).copy()
            offset += size
        else:
            mask = np.ones(shape, dtype=bool)
        mask.flags.writeable = False
        per_layer[layer.id] = LayerMask(mask)
    return SparsityProfile(threshold, float(target_sparsity), per_layer)


def global_sparsity(model: ModelGraph, profile: SparsityProfile) -> float:
    """Pruned fraction over prunable layers only."""
    layers = [layer for layer in model.weighted_layers if layer.prunable]
    total = sum(profile.per_layer[layer.id].total for layer in layers)
    nnz = sum(profile.per_layer[layer.id].nnz for layer in layers)
    return 1 - nnz / total


def compression_ratio(
    model: ModelGraph, profile: SparsityProfile | None, sparse_layers: Collection[str]
) -> float:
    """32-bit dense bits over deployed bits; sparse layers pay only for nonzeros.

    No index storage is charged: surviving connections are hard-wired.
    Biases are not counted.
    """
    weighted = {layer.id for layer in model.weighted_layers}
    unknown = set(sparse_layers) - weighted
    if unknown:
        raise ValidationError(f"sparse_layers name non-weighted or unknown layers: {sorted(unknown)}")
    total_weights = 0
    deployed_bits = 0
    for layer in model.weighted_layers:
        count = layer.fan_in * layer.fan_out
        total_weights += count
        if layer.id in sparse_layers:
            if profile is None:
                raise ValidationError("sparse layers given without a sparsity profile")
            count = profile.nnz(layer.id)
        deployed_bits += count * layer.weight_bits
    if deployed_bits == 0:
        return math.inf
    return FULL_PRECISION_BITS * total_weights / deployed_bits


def layer_sparsity_report(profile: SparsityProfile, model: ModelGraph | None = None) -> list[dict]:
    """Rows ``(id, total, nnz, density)`` in layer order."""
    ids = list(profile.per_layer)
    if model is not None:
        ids.sort(key=model.index)
    return [
        {
            "id": lid,
            "total": profile.per_layer[lid].total,
            "nnz": profile.per_layer[lid].nnz,
            "density": profile.per_layer[lid].density,
        }
        for lid in ids
    ]


def format_sparsity_table(rows: list[dict]) -> str:
    lines = [f"{'layer':<12}{'total':>10}{'nnz':>10}{'density':>10}"]
    for r in rows:
        lines.append(f"{r['id']:<12}{r['total']:>10}{r['nnz']:>10}{r['density']:>10.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- persistence


def pack_mask(mask: np.ndarray) -> bytes:
    """Row-major bits, LSB first within each byte, zero-padded to a byte boundary."""
    return np.packbits(np.asarray(mask, dtype=bool).ravel(), bitorder="little").tobytes()


def unpack_mask(raw: bytes, shape: tuple[int, ...]) -> np.ndarray:
    count = math.prod(shape)
    if len(raw) != (count + 7) // 8:
        raise ParseError(f"mask bitmap has {len(raw)} bytes, expected {(count + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=count, bitorder="little")
    return bits.astype(bool).reshape(shape)


def save_profile(profile: SparsityProfile, model: ModelGraph, path: str | Path) -> None:
    path = Path(path)
    mask_dir = path.parent / f"{path.stem}_masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    per_layer = {}
    for lid, entry in profile.per_layer.items():
        fname = f"{lid}.bits"
        (mask_dir / fname).write_bytes(pack_mask(entry.mask))
        per_layer[lid] = {
            "nnz": entry.nnz,
            "density": entry.density,
            "mask": f"file:{mask_dir.name}/{fname}",
        }
    doc = {
        "model_checksum": checksum_model(model),
        "global_threshold": profile.global_threshold,
        "target_sparsity": profile.target_sparsity,
        "per_layer": per_layer,
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_profile(path: str | Path, model: ModelGraph) -> SparsityProfile:
    """Read a profile and check it belongs to ``model``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read profile {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    expected = checksum_model(model)
    if doc.get("model_checksum") != expected:
        raise ChecksumMismatch(
            f"profile {path} was computed for model {doc.get('model_checksum')!r}, not {expected!r}"
        )
    per_layer = {}
    for lid, entry in doc["per_layer"].items():
        try:
            layer = model.layer(lid)
        except KeyError:
            raise ValidationError(f"profile names unknown layer {lid!r}") from None
        ref = entry["mask"]
        if not ref.startswith("file:"):
            raise ParseError(f"layer {lid!r}: mask must be a 'file:<path>' reference")
        raw = (path.parent / ref[len("file:"):]).read_bytes()
        mask = unpack_mask(raw, (layer.fan_out, layer.fan_in))
        mask.flags.writeable = False
        if int(np.count_nonzero(mask)) != int(entry["nnz"]):
            raise ValidationError(f"layer {lid!r}: mask bitmap disagrees with recorded nnz")
        per_layer[lid] = LayerMask(mask)
    return SparsityProfile(float(doc["global_threshold"]), float(doc["target_sparsity"]), per_layer)

"""Analytical cycle and LUT estimates per layer under a folding configuration.

A weighted layer is a matrix-vector unit with ``pe`` rows and ``simd`` columns
in parallel; a folded layer therefore needs ``ceil(fan_in/simd) *
ceil(fan_out/pe)`` cycles per output pixel.  Unrolled layers take one cycle
per output pixel.  LUT cost is linear in the multiplier array
(``pe * simd * wb * ab``) or, for hard-wired sparse layers, in the number of
surviving weights.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import ChecksumMismatch, InvalidFold, MissingProfile, ParseError, ValidationError
from .model import RESERVED_IDS, LayerKind, LayerNode, ModelGraph, checksum_model

DEFAULT_CLOCK_MHZ = 200.0
COEFFS_ENV = "FOLDSPARSE_COEFFS"


class Mode(str, enum.Enum):
    FOLDED = "Folded"
    UNROLLED_DENSE = "UnrolledDense"
    UNROLLED_SPARSE = "UnrolledSparse"

    @property
    def unrolled(self) -> bool:
        return self is not Mode.FOLDED


@dataclass(frozen=True)
class LayerFold:
    mode: Mode = Mode.FOLDED
    pe: int = 1
    simd: int = 1


FOLDED_ONES = LayerFold()


@dataclass(frozen=True)
class FoldingConfig:
    """Per-layer folds; layers without an entry are Folded with pe = simd = 1."""

    entries: Mapping[str, LayerFold] = field(default_factory=dict)
    clock_mhz: float = DEFAULT_CLOCK_MHZ
    strict: bool = True

    def entry(self, layer_id: str) -> LayerFold:
        return self.entries.get(layer_id, FOLDED_ONES)

    def with_entry(self, layer_id: str, fold: LayerFold) -> "FoldingConfig":
        entries = dict(self.entries)
        entries[layer_id] = fold
        return dataclasses.replace(self, entries=entries)

    def normalized(self, model: ModelGraph) -> "FoldingConfig":
        """Explicit entry for every weighted layer, in layer order."""
        entries = {layer.id: self.entry(layer.id) for layer in model.weighted_layers}
        return dataclasses.replace(self, entries=entries)

    @property
    def clock_hz(self) -> Fraction:
        return Fraction(self.clock_mhz) * 1_000_000


def all_ones_config(model: ModelGraph, clock_mhz: float = DEFAULT_CLOCK_MHZ, strict: bool = True):
    return FoldingConfig({layer.id: FOLDED_ONES for layer in model.weighted_layers}, clock_mhz, strict)


def unrolled_dense_config(model: ModelGraph, clock_mhz: float = DEFAULT_CLOCK_MHZ) -> FoldingConfig:
    entries = {
        layer.id: LayerFold(Mode.UNROLLED_DENSE, layer.fan_out, layer.fan_in)
        for layer in model.weighted_layers
    }
    return FoldingConfig(entries, clock_mhz)


@dataclass(frozen=True)
class CostCoefficients:
    c_mac: float = 1.0
    c_ctrl: float = 300.0
    c_sparse: float = 0.5
    c_pool: float = 5.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ValidationError(f"coefficient {f.name} must be positive")


def load_coefficients(path: str | Path | None = None) -> CostCoefficients:
    """Read a calibration file; falls back to $FOLDSPARSE_COEFFS, then defaults."""
    if path is None:
        path = os.environ.get(COEFFS_ENV)
        if not path:
            return CostCoefficients()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return CostCoefficients(**{k: float(v) for k, v in doc.items()})
    except OSError as exc:
        raise ParseError(f"cannot read coefficient file {path}: {exc}") from None
    except (json.JSONDecodeError, TypeError, AttributeError) as exc:
        raise ParseError(f"{path}: malformed coefficient file: {exc}") from None


# ---------------------------------------------------------------- validation


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def divisors(n: int) -> list[int]:
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


def next_fold_value(current: int, extent: int, strict: bool) -> int | None:
    """Smallest value above ``current`` that lowers ``ceil(extent / value)``.

    Strict mode only offers divisors of ``extent``; relaxed mode any integer.
    Returns None when already fully unfolded.
    """
    folds = ceil_div(extent, current)
    if folds <= 1:
        return None
    if strict:
        return next(d for d in divisors(extent) if d > current)
    return ceil_div(extent, folds - 1)


def fold_violations(layer: LayerNode, fold: LayerFold, strict: bool) -> list[str]:
    out = []
    if not layer.is_weighted:
        if fold != FOLDED_ONES:
            out.append(f"{layer.id}: {layer.kind.value} layers only accept Folded with PE=SIMD=1")
        return out
    fi, fo = layer.fan_in, layer.fan_out
    if fold.mode.unrolled:
        if fold.pe != fo or fold.simd != fi:
            out.append(f"{layer.id}: {fold.mode.value} requires PE == fan_out ({fo}) and SIMD == fan_in ({fi})")
        return out
    if not 1 <= fold.pe <= fo:
        out.append(f"{layer.id}: PE={fold.pe} outside [1, fan_out={fo}]")
    elif strict and fo % fold.pe:
        out.append(f"{layer.id}: pe must divide fan_out (PE={fold.pe}, fan_out={fo})")
    if not 1 <= fold.simd <= fi:
        out.append(f"{layer.id}: SIMD={fold.simd} outside [1, fan_in={fi}]")
    elif strict and fi % fold.simd:
        out.append(f"{layer.id}: simd must divide fan_in (SIMD={fold.simd}, fan_in={fi})")
    return out


def validate_config(model: ModelGraph, cfg: FoldingConfig, profile=None) -> list[str]:
    """All rule violations of ``cfg`` against ``model``; empty when valid."""
    known = {layer.id for layer in model.layers}
    out = [f"{lid}: unknown layer id" for lid in cfg.entries if lid not in known]
    if not cfg.clock_mhz > 0:
        out.append(f"clock_mhz must be positive, got {cfg.clock_mhz}")
    for layer in model.layers:
        fold = cfg.entry(layer.id)
        out.extend(fold_violations(layer, fold, cfg.strict))
        if fold.mode is Mode.UNROLLED_SPARSE and profile is not None and layer.id not in profile.per_layer:
            out.append(f"{layer.id}: UnrolledSparse without a sparsity profile entry")
    return out


# ---------------------------------------------------------------- per-layer model


def layer_cycles(layer: LayerNode, fold: LayerFold = FOLDED_ONES, strict: bool = True) -> int:
    problems = fold_violations(layer, fold, strict)
    if problems:
        raise InvalidFold("; ".join(problems))
    if layer.is_weighted:
        if fold.mode.unrolled:
            return layer.out_pixels
        per_pixel = ceil_div(layer.fan_in, fold.simd) * ceil_div(layer.fan_out, fold.pe)
        return layer.out_pixels * per_pixel
    return layer.out_pixels


def layer_luts(
    layer: LayerNode,
    fold: LayerFold = FOLDED_ONES,
    profile=None,
    coeffs: CostCoefficients = CostCoefficients(),
    strict: bool = True,
) -> float:
    problems = fold_violations(layer, fold, strict)
    if problems:
        raise InvalidFold("; ".join(problems))
    if not layer.is_weighted:
        return coeffs.c_pool * layer.channels
    wb, ab = layer.weight_bits, layer.act_bits
    if fold.mode is Mode.UNROLLED_SPARSE:
        if profile is None or layer.id not in profile.per_layer:
            raise MissingProfile(f"layer {layer.id!r} is UnrolledSparse but has no sparsity mask")
        return sparse_luts(layer, profile.nnz(layer.id), coeffs)
    return coeffs.c_mac * fold.pe * fold.simd * wb * ab + coeffs.c_ctrl


def sparse_luts(layer: LayerNode, nnz: int, coeffs: CostCoefficients) -> float:
    return coeffs.c_sparse * nnz * (layer.weight_bits + layer.act_bits) / 2 + coeffs.c_ctrl


# ---------------------------------------------------------------- aggregate


@dataclass(frozen=True)
class LayerCost:
    layer_id: str
    kind: str
    mode: str
    pe: int
    simd: int
    cycles: int
    luts: float


@dataclass(frozen=True)
class CostEstimate:
    layers: tuple[LayerCost, ...]
    clock_hz: Fraction

    @property
    def ii_cycles(self) -> int:
        return max(c.cycles for c in self.layers)

    @property
    def bottleneck_layer_id(self) -> str:
        ii = self.ii_cycles
        return next(c.layer_id for c in self.layers if c.cycles == ii)

    @property
    def latency_cycles(self) -> int:
        return sum(c.cycles for c in self.layers)

    @property
    def throughput_fps(self) -> Fraction:
        return self.clock_hz / self.ii_cycles

    @property
    def total_luts(self) -> float:
        return sum(c.luts for c in self.layers)

    def cycles(self, layer_id: str) -> int:
        return self.by_id(layer_id).cycles

    def by_id(self, layer_id: str) -> LayerCost:
        for c in self.layers:
            if c.layer_id == layer_id:
                return c
        raise KeyError(layer_id)

    def summary(self) -> dict:
        return {
            "bottleneck_layer_id": self.bottleneck_layer_id,
            "ii_cycles": self.ii_cycles,
            "latency_cycles": self.latency_cycles,
            "throughput_fps": float(self.throughput_fps),
            "total_luts": self.total_luts,
        }


def estimate(
    model: ModelGraph,
    cfg: FoldingConfig,
    profile=None,
    coeffs: CostCoefficients = CostCoefficients(),
) -> CostEstimate:
    rows = []
    for layer in model.layers:
        fold = cfg.entry(layer.id)
        try:
            cycles = layer_cycles(layer, fold, cfg.strict)
            luts = layer_luts(layer, fold, profile, coeffs, cfg.strict)
        except InvalidFold as exc:
            raise InvalidFold(f"layer {layer.id!r}: {exc}") from None
        rows.append(LayerCost(layer.id, layer.kind.value, fold.mode.value, fold.pe, fold.simd, cycles, luts))
    return CostEstimate(tuple(rows), cfg.clock_hz)


def throughput_ratio(new: CostEstimate, base: CostEstimate) -> float:
    return float(new.throughput_fps / base.throughput_fps)


# ---------------------------------------------------------------- persistence


def config_to_doc(cfg: FoldingConfig, model: ModelGraph | None = None) -> dict:
    doc: dict = {}
    if model is not None:
        doc["model_checksum"] = checksum_model(model)
        cfg = cfg.normalized(model)
    doc["clock_mhz"] = cfg.clock_mhz
    doc["strict"] = cfg.strict
    for lid, fold in cfg.entries.items():
        doc[lid] = {"mode": fold.mode.value, "PE": fold.pe, "SIMD": fold.simd}
    return doc


def config_from_doc(doc: Mapping) -> FoldingConfig:
    entries = {}
    try:
        for key, value in doc.items():
            if key in RESERVED_IDS:
                continue
            entries[key] = LayerFold(Mode(value.get("mode", "Folded")), int(value["PE"]), int(value["SIMD"]))
        return FoldingConfig(entries, float(doc.get("clock_mhz", DEFAULT_CLOCK_MHZ)), bool(doc.get("strict", True)))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed folding config: {exc!r}") from None


def save_config(cfg: FoldingConfig, model: ModelGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_doc(cfg, model), indent=1) + "\n", encoding="utf-8")


def load_config(path: str | Path, model: ModelGraph | None = None) -> FoldingConfig:
    """Read a folding config; when it carries a model checksum it must match ``model``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read folding config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: folding config must be a JSON object")
    if model is not None and "model_checksum" in doc and doc["model_checksum"] != checksum_model(model):
        raise ChecksumMismatch(f"folding config {path} was written for a different model")
    return config_from_doc(doc)

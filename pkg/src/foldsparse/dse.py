"""Resource-constrained folding search with sparse unfolding.

The pipeline is: global magnitude pruning, a greedy throughput-balancing
folding search (optionally followed by a relaxed pass that allows
non-divisor folds), a pre-pass that hard-wires any pruned layer whose sparse
unrolled form is no larger than its current form, and finally an iterative
bottleneck-elimination loop that applies sparse or factor unfolding moves
while the LUT budget allows.

Each accepted *step* strictly lowers the initiation interval.  A step is
normally a single move on the bottleneck layer.  When several layers tie at
the initiation interval no single move can lower it, so the step carries one
move per tied layer; the moves are recorded individually, each with its own
budget-checked intermediate configuration.

The loop only ever touches the current bottleneck layer(s); a layer that
stops being the bottleneck is not revisited to trade its LUTs elsewhere.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cost import (
    CostCoefficients,
    CostEstimate,
    FoldingConfig,
    LayerFold,
    Mode,
    all_ones_config,
    config_to_doc,
    estimate,
    layer_cycles,
    layer_luts,
    next_fold_value,
)
from .errors import InfeasibleBudget, NoPrunableLayers, ValidationError
from .model import LayerNode, ModelGraph, checksum_model
from .pruning import LayerMask, SparsityProfile, global_magnitude_prune

DEFAULT_MAX_ITERATIONS = 10_000


@dataclass(frozen=True)
class Budget:
    max_luts: float
    device_luts: float
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        if not self.max_luts > 0 or not self.device_luts > 0:
            raise ValidationError("budget LUT limits must be positive")
        if self.max_luts > self.device_luts:
            raise ValidationError(
                f"max_luts {self.max_luts} exceeds device_luts {self.device_luts}"
            )

    @classmethod
    def unlimited(cls) -> "Budget":
        return cls(math.inf, math.inf)


class MoveKind(str, enum.Enum):
    FACTOR_UNFOLD_PE = "FactorUnfoldPE"
    FACTOR_UNFOLD_SIMD = "FactorUnfoldSIMD"
    SPARSE_UNFOLD = "SparseUnfold"


# lower wins when scores tie
_KIND_RANK = {MoveKind.SPARSE_UNFOLD: 0, MoveKind.FACTOR_UNFOLD_SIMD: 1, MoveKind.FACTOR_UNFOLD_PE: 2}


@dataclass(frozen=True)
class Move:
    kind: MoveKind
    layer_id: str
    value: int | None
    delta_ii_cycles: int
    delta_luts: float

    def to_doc(self) -> dict:
        return {
            "kind": self.kind.value,
            "layer_id": self.layer_id,
            "value": self.value,
            "delta_ii_cycles": self.delta_ii_cycles,
            "delta_luts": self.delta_luts,
        }


@dataclass(frozen=True)
class Step:
    moves: tuple[Move, ...]
    configs: tuple[FoldingConfig, ...]  # config after each move
    before: CostEstimate
    after: CostEstimate
    intermediate_luts: tuple[float, ...]


@dataclass(frozen=True)
class DseReport:
    model_checksum: str
    budget: Budget
    baseline_config: FoldingConfig
    final_config: FoldingConfig
    baseline_estimate: CostEstimate
    final_estimate: CostEstimate
    steps: tuple[Step, ...]
    sparse_layers: tuple[str, ...]
    dense_layers: tuple[str, ...]
    search_config: FoldingConfig | None = None
    prepass_layers: tuple[str, ...] = ()
    terminated_by: str = "no_candidate"

    @property
    def accepted_moves(self) -> list[Move]:
        return [m for s in self.steps for m in s.moves]

    def history(self) -> list[tuple[FoldingConfig, CostEstimate]]:
        """Baseline plus the config/estimate reached after every step."""
        out = [(self.baseline_config, self.baseline_estimate)]
        out.extend((s.configs[-1], s.after) for s in self.steps)
        return out

    @property
    def pareto_points(self) -> list[dict]:
        points = [
            {
                "step": i,
                "total_luts": est.total_luts,
                "ii_cycles": est.ii_cycles,
                "throughput_fps": est.throughput_fps,
            }
            for i, (_, est) in enumerate(self.history())
        ]
        return pareto_filter(points)


def pareto_filter(points: Sequence[dict]) -> list[dict]:
    """Drop points dominated in (fewer LUTs, more FPS); exact duplicates keep the first."""
    kept = []
    for i, p in enumerate(points):
        dominated = False
        for j, q in enumerate(points):
            if i == j:
                continue
            no_worse = q["total_luts"] <= p["total_luts"] and q["throughput_fps"] >= p["throughput_fps"]
            better = q["total_luts"] < p["total_luts"] or q["throughput_fps"] > p["throughput_fps"]
            if no_worse and (better or j < i):
                dominated = True
                break
        if not dominated:
            kept.append(p)
    return kept


# ---------------------------------------------------------------- helpers


def sparse_eligible(layer: LayerNode, profile: SparsityProfile | None) -> bool:
    """A layer may be sparse-unfolded only if it is prunable and actually lost weights."""
    if profile is None or not layer.is_weighted or not layer.prunable:
        return False
    entry = profile.per_layer.get(layer.id)
    return entry is not None and entry.nnz < entry.total


def _layer_candidates(layer: LayerNode, cfg: FoldingConfig, profile) -> list[tuple[MoveKind, LayerFold, int | None]]:
    if not layer.is_weighted:
        return []
    fold = cfg.entry(layer.id)
    if fold.mode.unrolled:
        return []
    out = []
    if sparse_eligible(layer, profile):
        out.append((MoveKind.SPARSE_UNFOLD, LayerFold(Mode.UNROLLED_SPARSE, layer.fan_out, layer.fan_in), None))
    pe = next_fold_value(fold.pe, layer.fan_out, cfg.strict)
    if pe is not None:
        out.append((MoveKind.FACTOR_UNFOLD_PE, LayerFold(Mode.FOLDED, pe, fold.simd), pe))
    simd = next_fold_value(fold.simd, layer.fan_in, cfg.strict)
    if simd is not None:
        out.append((MoveKind.FACTOR_UNFOLD_SIMD, LayerFold(Mode.FOLDED, fold.pe, simd), simd))
    return out


def _tied_layers(model: ModelGraph, est: CostEstimate) -> list[LayerNode]:
    ii = est.ii_cycles
    return [layer for layer, c in zip(model.layers, est.layers) if c.cycles == ii]


def _check_budget_start(est: CostEstimate, budget: Budget, what: str) -> None:
    if est.total_luts > budget.max_luts:
        raise InfeasibleBudget(
            f"{what} needs {est.total_luts:g} LUTs, above the budget of {budget.max_luts:g}"
        )


# ---------------------------------------------------------------- baseline search


def _balance_step_options(layer, cfg, est, budget, coeffs) -> list[LayerFold]:
    """Steps for one bottleneck layer, most preferred first.

    The smaller of PE/SIMD is raised first; on equal values the cheaper step
    goes first, SIMD before PE when the cost is equal too.  The larger
    dimension is only a fallback when the smaller one cannot step or does not
    fit.
    """
    fold = cfg.entry(layer.id)
    base_cycles = est.cycles(layer.id)
    base_luts = est.by_id(layer.id).luts
    options = []
    for kind, new_fold, _ in _layer_candidates(layer, cfg, None):
        cycles = layer_cycles(layer, new_fold, cfg.strict)
        dluts = layer_luts(layer, new_fold, None, coeffs, cfg.strict) - base_luts
        if cycles >= base_cycles or est.total_luts + dluts > budget.max_luts:
            continue
        raised = fold.pe if kind is MoveKind.FACTOR_UNFOLD_PE else fold.simd
        other = fold.simd if kind is MoveKind.FACTOR_UNFOLD_PE else fold.pe
        options.append(((raised > other, dluts, _KIND_RANK[kind]), new_fold))
    options.sort(key=lambda o: o[0])
    return [o[1] for o in options]


def _greedy_balance(model, cfg, budget, coeffs, iterations: int) -> FoldingConfig:
    for _ in range(iterations):
        est = estimate(model, cfg, None, coeffs)
        for layer in _tied_layers(model, est):
            options = _balance_step_options(layer, cfg, est, budget, coeffs)
            if options:
                cfg = cfg.with_entry(layer.id, options[0])
                break
        else:
            return cfg
    return cfg


def baseline_folding_search(
    model: ModelGraph,
    budget: Budget,
    relax: bool = True,
    coeffs: CostCoefficients = CostCoefficients(),
    clock_mhz: float | None = None,
) -> FoldingConfig:
    """Greedy throughput balancing from the all-ones fold.

    The bottleneck layer (lowest index among ties, moving on to the next tied
    layer if it cannot improve) raises its smaller fold dimension to the next
    valid value, as long as the total stays within budget.  With ``relax`` a
    second pass continues on the non-divisor lattice.
    """
    kwargs = {} if clock_mhz is None else {"clock_mhz": clock_mhz}
    cfg = all_ones_config(model, strict=True, **kwargs)
    _check_budget_start(estimate(model, cfg, None, coeffs), budget, "the all-ones folding")
    cfg = _greedy_balance(model, cfg, budget, coeffs, budget.max_iterations)
    if relax:
        cfg = _greedy_balance(model, replace(cfg, strict=False), budget, coeffs, budget.max_iterations)
    return cfg


# ---------------------------------------------------------------- sparse pre-pass


def sparse_unfold_prepass(
    model: ModelGraph,
    cfg: FoldingConfig,
    profile: SparsityProfile,
    coeffs: CostCoefficients = CostCoefficients(),
) -> tuple[FoldingConfig, list[str]]:
    """Switch every eligible layer whose sparse unrolled form costs no more LUTs."""
    converted = []
    for layer in model.weighted_layers:
        fold = cfg.entry(layer.id)
        if fold.mode is Mode.UNROLLED_SPARSE or not sparse_eligible(layer, profile):
            continue
        sparse = LayerFold(Mode.UNROLLED_SPARSE, layer.fan_out, layer.fan_in)
        current = layer_luts(layer, fold, profile, coeffs, cfg.strict)
        if layer_luts(layer, sparse, profile, coeffs, cfg.strict) <= current:
            cfg = cfg.with_entry(layer.id, sparse)
            converted.append(layer.id)
    return cfg, converted


# ---------------------------------------------------------------- bottleneck elimination


@dataclass(order=True)
class _Choice:
    sort_key: tuple
    layer_index: int = field(compare=False)
    kind: MoveKind = field(compare=False)
    fold: LayerFold = field(compare=False)
    value: int | None = field(compare=False)
    delta_luts: float = field(compare=False)


def _choices_for(model, layer, cfg, est, profile, coeffs, ii_rest) -> list[_Choice]:
    ii = est.ii_cycles
    base_luts = est.by_id(layer.id).luts
    out = []
    for kind, new_fold, value in _layer_candidates(layer, cfg, profile):
        cycles = layer_cycles(layer, new_fold, cfg.strict)
        if cycles >= ii:
            continue
        gain = ii - max(cycles, ii_rest)
        dluts = layer_luts(layer, new_fold, profile, coeffs, cfg.strict) - base_luts
        score = gain / max(dluts, 1)
        out.append(_Choice((-score, _KIND_RANK[kind]), model.index(layer.id), kind, new_fold, value, dluts))
    out.sort()
    return out


def _plan_step(model, cfg, est, profile, budget, coeffs) -> list[_Choice] | None:
    tied = _tied_layers(model, est)
    tied_ids = {layer.id for layer in tied}
    ii_rest = max((c.cycles for c in est.layers if c.layer_id not in tied_ids), default=0)
    per_layer = [_choices_for(model, layer, cfg, est, profile, coeffs, ii_rest) for layer in tied]
    if any(not choices for choices in per_layer):
        return None
    # best-scoring move per tied layer, as long as each still fits
    plan, total = [], est.total_luts
    for choices in per_layer:
        fitting = [c for c in choices if total + c.delta_luts <= budget.max_luts]
        if not fitting:
            plan = None
            break
        plan.append(fitting[0])
        total += fitting[0].delta_luts
    if plan is not None:
        return plan
    # otherwise the cheapest move per layer is the only combination that can fit
    plan = [min(choices, key=lambda c: (c.delta_luts, c.sort_key)) for choices in per_layer]
    if est.total_luts + sum(c.delta_luts for c in plan) <= budget.max_luts:
        return plan
    return None


def eliminate_bottlenecks(
    model: ModelGraph,
    cfg: FoldingConfig,
    profile: SparsityProfile | None,
    budget: Budget,
    coeffs: CostCoefficients = CostCoefficients(),
) -> DseReport:
    start = estimate(model, cfg, profile, coeffs)
    _check_budget_start(start, budget, "the starting configuration")
    est = start
    current = cfg
    steps: list[Step] = []
    terminated_by = "no_candidate"
    while True:
        if len(steps) >= budget.max_iterations:
            terminated_by = "max_iterations"
            break
        plan = _plan_step(model, current, est, profile, budget, coeffs)
        if plan is None:
            break
        plan.sort(key=lambda c: (c.delta_luts, c.layer_index))
        moves, configs, luts = [], [], []
        prev = est
        for choice in plan:
            layer_id = model.layers[choice.layer_index].id
            current = current.with_entry(layer_id, choice.fold)
            after = estimate(model, current, profile, coeffs)
            if after.total_luts > budget.max_luts:  # pragma: no cover - guarded by the ordering
                raise AssertionError("intermediate configuration exceeds budget")
            moves.append(
                Move(
                    choice.kind,
                    layer_id,
                    choice.value,
                    after.ii_cycles - prev.ii_cycles,
                    after.total_luts - prev.total_luts,
                )
            )
            configs.append(current)
            luts.append(after.total_luts)
            prev = after
        steps.append(Step(tuple(moves), tuple(configs), est, prev, tuple(luts)))
        est = prev
    sparse = tuple(
        layer.id for layer in model.weighted_layers if current.entry(layer.id).mode is Mode.UNROLLED_SPARSE
    )
    dense = tuple(layer.id for layer in model.weighted_layers if layer.id not in sparse)
    return DseReport(
        model_checksum=checksum_model(model),
        budget=budget,
        baseline_config=cfg,
        final_config=current,
        baseline_estimate=start,
        final_estimate=est,
        steps=tuple(steps),
        sparse_layers=sparse,
        dense_layers=dense,
        terminated_by=terminated_by,
    )


# ---------------------------------------------------------------- full pipeline


@dataclass(frozen=True)
class DseResult:
    report: DseReport
    profile: SparsityProfile
    final_config: FoldingConfig


def _dense_profile(model: ModelGraph) -> SparsityProfile:
    per_layer = {}
    for layer in model.weighted_layers:
        mask = np.ones((layer.fan_out, layer.fan_in), dtype=bool)
        mask.flags.writeable = False
        per_layer[layer.id] = LayerMask(mask)
    return SparsityProfile(0.0, 0.0, per_layer)


def run_dse(
    model: ModelGraph,
    target_sparsity: float,
    budget: Budget,
    coeffs: CostCoefficients = CostCoefficients(),
    relax: bool = True,
    clock_mhz: float | None = None,
) -> DseResult:
    try:
        profile = global_magnitude_prune(model, target_sparsity)
    except NoPrunableLayers:
        profile = _dense_profile(model)
    searched = baseline_folding_search(model, budget, relax, coeffs, clock_mhz)
    cfg, converted = sparse_unfold_prepass(model, searched, profile, coeffs)
    report = eliminate_bottlenecks(model, cfg, profile, budget, coeffs)
    report = replace(report, search_config=searched, prepass_layers=tuple(converted))
    return DseResult(report, profile, report.final_config)


# ---------------------------------------------------------------- export


def _budget_doc(budget: Budget) -> dict:
    def num(x):
        return None if math.isinf(x) else x

    return {
        "max_luts": num(budget.max_luts),
        "device_luts": num(budget.device_luts),
        "max_iterations": budget.max_iterations,
    }


def report_to_doc(report: DseReport, model: ModelGraph) -> dict:
    doc = {
        "model_checksum": report.model_checksum,
        "budget": _budget_doc(report.budget),
        "search_config": config_to_doc(report.search_config, model) if report.search_config else None,
        "prepass_layers": list(report.prepass_layers),
        "baseline_config": config_to_doc(report.baseline_config, model),
        "baseline_estimate": report.baseline_estimate.summary(),
        "steps": [
            {
                "step": i,
                "moves": [m.to_doc() for m in s.moves],
                "before": s.before.summary(),
                "after": s.after.summary(),
            }
            for i, s in enumerate(report.steps, start=1)
        ],
        "final_config": config_to_doc(report.final_config, model),
        "final_estimate": report.final_estimate.summary(),
        "sparse_layers": list(report.sparse_layers),
        "dense_layers": list(report.dense_layers),
        "pareto_points": [dict(p, throughput_fps=float(p["throughput_fps"])) for p in report.pareto_points],
        "terminated_by": report.terminated_by,
    }
    return doc


def report_to_json(report: DseReport, model: ModelGraph) -> str:
    return json.dumps(report_to_doc(report, model), indent=1) + "\n"


def pareto_csv(report: DseReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "total_luts", "ii_cycles", "throughput_fps"])
    for p in report.pareto_points:
        writer.writerow([p["step"], p["total_luts"], p["ii_cycles"], repr(float(p["throughput_fps"]))])
    return buf.getvalue()

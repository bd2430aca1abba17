"""Command-line front end.

Exit codes: 0 success, 1 input/validation error, 2 infeasible budget,
3 oracle search space too large.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import lenet5_path
from .cost import (
    CostEstimate,
    FoldingConfig,
    Mode,
    all_ones_config,
    estimate,
    load_coefficients,
    load_config,
    save_config,
    throughput_ratio,
    unrolled_dense_config,
    validate_config,
)
from .dse import Budget, pareto_csv, report_to_json, run_dse
from .errors import FoldSparseError, InfeasibleBudget, SearchSpaceTooLarge
from .model import ModelGraph, checksum_model, load_model
from .oracle import exhaustive_best_config
from .pruning import (
    compression_ratio,
    format_sparsity_table,
    global_magnitude_prune,
    global_sparsity,
    layer_sparsity_report,
    load_profile,
    save_profile,
)
from .quant import evaluate_accuracy, load_testset, quant_specs
from .sparsemap import export_sparse_map, verify_map_against_inference, write_sparse_map

DEFAULT_DEVICE_LUTS = 872_000
DEFAULT_BUDGET_FRACTION = 0.7
DEFAULT_SPARSITY = 0.845


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _model(path: str) -> ModelGraph:
    if path == "lenet5":
        path = str(lenet5_path())
    return load_model(path)


def _budget(args) -> Budget:
    device = args.device_luts
    limit = args.budget_luts if args.budget_luts is not None else DEFAULT_BUDGET_FRACTION * device
    return Budget(limit, device)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def format_estimate(est: CostEstimate, device_luts: float | None = None) -> str:
    lines = [f"{'layer':<10}{'kind':<16}{'mode':<16}{'PE':>6}{'SIMD':>6}{'cycles':>10}{'luts':>11}"]
    bottleneck = est.bottleneck_layer_id
    for c in est.layers:
        mark = "  <-- bottleneck" if c.layer_id == bottleneck else ""
        lines.append(
            f"{c.layer_id:<10}{c.kind:<16}{c.mode:<16}{c.pe:>6}{c.simd:>6}{c.cycles:>10}{c.luts:>11.1f}{mark}"
        )
    agg = (
        f"ii={est.ii_cycles} cycles  latency={est.latency_cycles} cycles  "
        f"fps={float(est.throughput_fps):.1f}  total_luts={est.total_luts:.1f}"
    )
    if device_luts:
        agg += f"  utilization={100 * est.total_luts / device_luts:.2f}%"
    lines.append(agg)
    return "\n".join(lines)


def estimate_csv(est: CostEstimate) -> str:
    rows = [["layer_id", "kind", "mode", "PE", "SIMD", "cycles", "luts"]]
    rows += [[c.layer_id, c.kind, c.mode, c.pe, c.simd, c.cycles, c.luts] for c in est.layers]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _checked_config(model: ModelGraph, path: str | None, profile) -> FoldingConfig:
    cfg = all_ones_config(model) if path is None else load_config(path, model)
    problems = validate_config(model, cfg, profile)
    if problems:
        raise CliError("invalid folding config:\n  " + "\n  ".join(problems))
    return cfg


# ---------------------------------------------------------------- commands


def cmd_prune(args) -> int:
    model = _model(args.model)
    profile = global_magnitude_prune(model, args.sparsity)
    save_profile(profile, model, args.out)
    print(format_sparsity_table(layer_sparsity_report(profile, model)))
    n = sum(layer.fan_in * layer.fan_out for layer in model.weighted_layers if layer.prunable)
    print(f"global density: {1 - global_sparsity(model, profile):.6f} over {n} prunable weights")
    print(f"global threshold: {profile.global_threshold:.6g}")
    print(f"profile written to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    model = _model(args.model)
    coeffs = load_coefficients(args.coeffs)
    profile = load_profile(args.profile, model) if args.profile else None
    cfg = _checked_config(model, args.config, profile)
    est = estimate(model, cfg, profile, coeffs)
    print(format_estimate(est, args.device_luts))
    if args.csv:
        _write(Path(args.csv), estimate_csv(est))
    if args.baseline:
        base_cfg = _checked_config(model, args.baseline, profile)
        base = estimate(model, base_cfg, profile, coeffs)
        print(f"throughput ratio vs baseline: {throughput_ratio(est, base):.3f}")
        print(f"LUT ratio vs baseline: {est.total_luts / base.total_luts:.3f}")
    return 0


def cmd_dse(args) -> int:
    model = _model(args.model)
    coeffs = load_coefficients(args.coeffs)
    budget = _budget(args)
    result = run_dse(model, args.sparsity, budget, coeffs, relax=args.relax, clock_mhz=args.clock_mhz)
    report = result.report
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(result.final_config, model, out / "folding_config.json")
    save_profile(result.profile, model, out / "profile.json")
    _write(out / "dse_report.json", report_to_json(report, model))
    _write(out / "pareto.csv", pareto_csv(report))
    _write(out / "estimate.csv", estimate_csv(report.final_estimate))
    smap = export_sparse_map(model, result.profile, result.final_config, quant_specs(model))
    write_sparse_map(smap, out / "sparse_maps", checksum_model(model))

    final, base = report.final_estimate, report.baseline_estimate
    dense_unroll = estimate(model, unrolled_dense_config(model, report.final_config.clock_mhz), None, coeffs)
    prunable = [layer.id for layer in model.weighted_layers if layer.prunable]
    print(f"model: {model.name} ({checksum_model(model)[:12]})")
    print(f"search baseline -> pre-pass sparse layers: {', '.join(report.prepass_layers) or 'none'}")
    print(f"accepted steps: {len(report.steps)} ({len(report.accepted_moves)} moves)")
    print(format_estimate(final, budget.device_luts))
    print(f"throughput ratio vs engine start: {throughput_ratio(final, base):.3f}")
    print(f"throughput ratio vs dense full unroll: {throughput_ratio(final, dense_unroll):.3f}")
    print(f"LUT ratio vs dense full unroll: {100 * final.total_luts / dense_unroll.total_luts:.2f}%")
    print(f"LUT utilization vs device ({budget.device_luts:g}): {100 * final.total_luts / budget.device_luts:.2f}%")
    print(f"compression (deployed dispositions): {compression_ratio(model, result.profile, report.sparse_layers):.2f}x")
    print(f"compression (all prunable layers sparse): {compression_ratio(model, result.profile, prunable):.2f}x")
    print(f"sparse layers: {', '.join(report.sparse_layers) or 'none'}")
    print(f"dense layers: {', '.join(report.dense_layers) or 'none'}")
    print(f"outputs written to {out}")
    return 0


def cmd_simulate(args) -> int:
    model = _model(args.model)
    profile = load_profile(args.profile, model) if args.profile else None
    masks = profile
    if profile is not None and args.config:
        cfg = _checked_config(model, args.config, profile)
        # only layers deployed sparse lose their pruned weights
        masks = {
            lid: entry.mask
            for lid, entry in profile.per_layer.items()
            if cfg.entry(lid).mode is Mode.UNROLLED_SPARSE
        }
    testset = load_testset(args.testset)
    acc = evaluate_accuracy(model, masks, quant_specs(model), testset)
    correct = round(acc * len(testset))
    print(f"accuracy: {acc:.4f} ({correct}/{len(testset)})")
    return 0


def cmd_oracle(args) -> int:
    model = _model(args.model)
    coeffs = load_coefficients(args.coeffs)
    budget = _budget(args)
    profile = global_magnitude_prune(model, args.sparsity)
    best = exhaustive_best_config(model, profile, budget, coeffs)
    if best is None:
        raise CliError("no configuration fits the budget", code=2)
    heuristic = run_dse(model, args.sparsity, budget, coeffs, relax=args.relax).report.final_estimate
    oracle_est = best[1]
    gap = 100 * (heuristic.ii_cycles - oracle_est.ii_cycles) / oracle_est.ii_cycles
    print(f"oracle:    ii={oracle_est.ii_cycles} total_luts={oracle_est.total_luts:.1f}")
    print(f"heuristic: ii={heuristic.ii_cycles} total_luts={heuristic.total_luts:.1f}")
    print(f"gap: {gap:.2f}%")
    return 0


def cmd_export_sparse_map(args) -> int:
    model = _model(args.model)
    profile = load_profile(args.profile, model)
    cfg = _checked_config(model, args.config, profile)
    specs = quant_specs(model)
    smap = export_sparse_map(model, profile, cfg, specs)
    write_sparse_map(smap, args.out, checksum_model(model))
    for lid, m in smap.items():
        print(f"{lid}: {m.connections} connections (profile nnz {m.profile_nnz}, {m.quantized_zero_drops} quantized to zero)")
    if args.verify:
        rng = np.random.default_rng(0)
        bits = model.layers[0].act_bits
        inputs = [rng.integers(0, 2**bits, size=model.input_shape) for _ in range(args.verify)]
        result = verify_map_against_inference(smap, model, profile, specs, inputs)
        print(f"verification: {'pass' if result else 'FAIL'} on {result.checked_inputs} inputs {result.detail}".rstrip())
        if not result:
            return 1
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foldsparse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    model_help = "model descriptor JSON ('lenet5' selects the bundled one)"

    p = sub.add_parser("prune", help="global magnitude pruning")
    p.add_argument("model", help=model_help)
    p.add_argument("--sparsity", type=float, default=DEFAULT_SPARSITY)
    p.add_argument("--out", default="profile.json")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("estimate", help="per-layer cycles/LUTs for a folding config")
    p.add_argument("model", help=model_help)
    p.add_argument("--config", help="folding config JSON (default: all PE=SIMD=1)")
    p.add_argument("--profile")
    p.add_argument("--coeffs")
    p.add_argument("--csv", help="write per-layer CSV here")
    p.add_argument("--baseline", help="second config; prints throughput ratio config/baseline")
    p.add_argument("--device-luts", type=float, default=DEFAULT_DEVICE_LUTS)
    p.set_defaults(func=cmd_estimate)

    for name, func, helptext in (
        ("dse", cmd_dse, "full prune/fold/sparse-unfold exploration"),
        ("oracle", cmd_oracle, "exhaustive search vs heuristic on small models"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("model", help=model_help)
        p.add_argument("--sparsity", type=float, default=DEFAULT_SPARSITY)
        p.add_argument("--budget-luts", type=float, default=None, help="default: 0.7 x device LUTs")
        p.add_argument("--device-luts", type=float, default=DEFAULT_DEVICE_LUTS)
        p.add_argument("--coeffs")
        p.add_argument("--relax", action=argparse.BooleanOptionalAction, default=True)
        if name == "dse":
            p.add_argument("--clock-mhz", type=float, default=200.0)
            p.add_argument("--out", default="dse_out")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="integer inference accuracy on a testset")
    p.add_argument("model", help=model_help)
    p.add_argument("--testset", required=True)
    p.add_argument("--profile")
    p.add_argument("--config", help="restrict masks to layers deployed UnrolledSparse")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-sparse-map", help="write static sparse-connection maps")
    p.add_argument("model", help=model_help)
    p.add_argument("--profile", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="sparse_maps")
    p.add_argument("--verify", type=int, default=100, help="random inputs to check against inference (0 = skip)")
    p.set_defaults(func=cmd_export_sparse_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InfeasibleBudget as exc:
        print(f"error: infeasible budget: {exc}", file=sys.stderr)
        return 2
    except SearchSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FoldSparseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

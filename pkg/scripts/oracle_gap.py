"""Optimality gap of the DSE heuristic against exhaustive search on random FC chains.

    python scripts/oracle_gap.py --models 200 --seed 0
"""

import argparse
import time

import numpy as np

from foldsparse.dse import Budget, run_dse
from foldsparse.oracle import exhaustive_best_config
from foldsparse.pruning import global_magnitude_prune
from foldsparse.synth import oracle_gap_case


def gap_for(model, sparsity, budget, relax=True):
    profile = global_magnitude_prune(model, sparsity)
    _, oracle = exhaustive_best_config(model, profile, budget)
    report = run_dse(model, sparsity, budget, relax=relax).report
    heuristic = report.final_estimate
    return heuristic.ii_cycles / oracle.ii_cycles, report, oracle


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-relax", action="store_true")
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    ratios = []
    start = time.perf_counter()
    print(f"{'#':>4} {'layers':>6} {'dims':<22} {'sparsity':>8} {'budget':>9} {'oracle_ii':>9} {'dse_ii':>7} {'gap%':>7}")
    for i in range(args.models):
        model, sparsity, limit = oracle_gap_case(rng)
        budget = Budget(limit, limit)
        ratio, report, oracle = gap_for(model, sparsity, budget, relax=not args.no_relax)
        ratios.append(ratio)
        dims = "-".join(str(layer.fan_in) for layer in model.layers) + f"-{model.layers[-1].fan_out}"
        print(
            f"{i:>4} {len(model.layers):>6} {dims:<22} {sparsity:>8.2f} {budget.max_luts:>9.0f} "
            f"{oracle.ii_cycles:>9} {report.final_estimate.ii_cycles:>7} {100 * (ratio - 1):>7.2f}"
        )
    ratios = np.array(ratios)
    print(
        f"worst gap {100 * (ratios.max() - 1):.2f}%  mean {100 * (ratios.mean() - 1):.2f}%  "
        f"over 10%: {(ratios > 1.10).sum()}/{len(ratios)}  ({time.perf_counter() - start:.1f}s)"
    )


if __name__ == "__main__":
    main()

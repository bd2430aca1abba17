"""Freeze the LeNet-5 bottleneck-elimination trajectory used as a regression golden.

The trajectory starts from the all-ones folding (no baseline search) so every
move of the elimination loop is visible, with the bundled descriptor pruned to
the default target and the default CLI budget.

    python scripts/freeze_goldens.py [--out tests/golden/lenet5_elimination.json]
"""

import argparse
import json
from pathlib import Path

from foldsparse import lenet5_path
from foldsparse.cost import all_ones_config
from foldsparse.dse import Budget, eliminate_bottlenecks
from foldsparse.model import load_model
from foldsparse.pruning import global_magnitude_prune

TARGET = 0.845
DEVICE_LUTS = 872_000
BUDGET_LUTS = 0.7 * DEVICE_LUTS


def trajectory() -> dict:
    model = load_model(lenet5_path())
    profile = global_magnitude_prune(model, TARGET)
    report = eliminate_bottlenecks(model, all_ones_config(model), profile, Budget(BUDGET_LUTS, DEVICE_LUTS))
    return {
        "target_sparsity": TARGET,
        "budget_luts": BUDGET_LUTS,
        "steps": [
            {"moves": [m.to_doc() for m in s.moves], "ii_cycles": s.after.ii_cycles, "total_luts": s.after.total_luts}
            for s in report.steps
        ],
        "final_bottleneck": report.final_estimate.bottleneck_layer_id,
        "sparse_layers": list(report.sparse_layers),
        "terminated_by": report.terminated_by,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    default = Path(__file__).resolve().parents[1] / "tests" / "golden" / "lenet5_elimination.json"
    parser.add_argument("--out", type=Path, default=default)
    args = parser.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(trajectory(), indent=1) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

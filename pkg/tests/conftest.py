import sys

import numpy as np
import pytest
from hypothesis import settings

from foldsparse import lenet5_path
from foldsparse.model import LayerKind, LayerNode, build_model, load_model

settings.register_profile("ci", max_examples=60, deadline=None)
settings.register_profile("dev", max_examples=20, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def lenet5():
    return load_model(lenet5_path())


def fc(lid, out_features, wb=4, ab=4, scale=1.0, prunable=True, bias=None):
    return LayerNode(
        id=lid,
        kind=LayerKind.FULLY_CONNECTED,
        weight_bits=wb,
        act_bits=ab,
        out_features=out_features,
        weight_scale=scale,
        prunable=prunable,
        bias=bias,
    )


@pytest.fixture
def toy_fc():
    """FC 8->8 followed by FC 8->4, 4-bit everywhere."""
    rng = np.random.default_rng(7)
    return build_model(
        "toy",
        (8,),
        [fc("L1", 8), fc("L2", 4)],
        {"L1": rng.normal(size=(8, 8)), "L2": rng.normal(size=(4, 8))},
    )


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("tests.test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(acceptance.RESULTS):
        status, detail = acceptance.RESULTS[name]
        terminalreporter.write_line(f"{status:<4} {name}: {detail}")


def fc_model(weights: dict, bits=4, prunable=None, name="m"):
    """FC chain built from ``{id: (fan_out, fan_in) array}`` in insertion order."""
    prunable = prunable or {}
    arrays = {k: np.asarray(v, dtype=float) for k, v in weights.items()}
    first = next(iter(arrays.values()))
    layers = [fc(k, a.shape[0], wb=bits, ab=bits, prunable=prunable.get(k, True)) for k, a in arrays.items()]
    return build_model(name, (first.shape[1],), layers, arrays)


def duplicate_heavy_chain(rng: np.random.Generator):
    """Random FC chain whose magnitudes are drawn from a tiny pool, so ties are everywhere."""
    n_layers = int(rng.integers(1, 4))
    dims = [int(d) for d in rng.integers(1, 12, size=n_layers + 1)]
    pool = rng.choice([0.1, 0.25, 0.5, 1.0], size=int(rng.integers(1, 4)))
    weights = {}
    for i in range(n_layers):
        size = (dims[i + 1], dims[i])
        weights[f"fc{i}"] = rng.choice(pool, size=size) * rng.choice([-1, 1], size=size)
    return fc_model(weights)

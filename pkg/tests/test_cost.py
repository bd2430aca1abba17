import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from foldsparse.cost import (
    FOLDED_ONES,
    CostCoefficients,
    CostEstimate,
    FoldingConfig,
    LayerCost,
    LayerFold,
    Mode,
    all_ones_config,
    divisors,
    estimate,
    layer_cycles,
    layer_luts,
    load_coefficients,
    load_config,
    next_fold_value,
    save_config,
    sparse_luts,
    throughput_ratio,
    unrolled_dense_config,
    validate_config,
)
from foldsparse.errors import ChecksumMismatch, InvalidFold, MissingProfile, ParseError, ValidationError
from foldsparse.model import build_model
from foldsparse.pruning import LayerMask, SparsityProfile, global_magnitude_prune

from .conftest import fc, fc_model


def fc_120_84():
    return build_model("fc", (120,), [fc("fc", 84)], {"fc": np.ones((84, 120))})


def sparse_profile(layer_id, shape, nnz):
    mask = np.zeros(shape, bool)
    mask.ravel()[:nnz] = True
    return SparsityProfile(0.0, 0.0, {layer_id: LayerMask(mask)})


def test_lenet5_all_ones(lenet5):
    assert layer_cycles(lenet5.layer("conv2")) == 100 * 150 * 16 == 240_000
    assert layer_cycles(lenet5.layer("conv1")) == 117_600
    est = estimate(lenet5, all_ones_config(lenet5))
    assert est.ii_cycles == 240_000
    assert est.bottleneck_layer_id == "conv2"


def test_fc_fold_example():
    layer = fc_120_84().layer("fc")
    fold = LayerFold(Mode.FOLDED, 4, 8)
    assert layer_cycles(layer, fold) == 315
    assert layer_luts(layer, fold) == 812


def test_unrolled_cycles(lenet5):
    p = global_magnitude_prune(lenet5, 0.5)
    for layer in lenet5.weighted_layers:
        dense = LayerFold(Mode.UNROLLED_DENSE, layer.fan_out, layer.fan_in)
        sparse = LayerFold(Mode.UNROLLED_SPARSE, layer.fan_out, layer.fan_in)
        assert layer_cycles(layer, sparse) == layer_cycles(layer, dense) == layer.out_pixels
    assert layer_cycles(lenet5.layer("fc1"), LayerFold(Mode.UNROLLED_DENSE, 120, 400)) == 1
    assert layer_luts(lenet5.layer("fc1"), LayerFold(Mode.UNROLLED_SPARSE, 120, 400), p) < layer_luts(
        lenet5.layer("fc1"), LayerFold(Mode.UNROLLED_DENSE, 120, 400)
    )


def test_non_weighted_layers(lenet5):
    assert layer_cycles(lenet5.layer("pool1")) == 14 * 14
    assert layer_cycles(lenet5.layer("thr3")) == 1
    assert layer_luts(lenet5.layer("pool1")) == 5 * 6
    assert layer_luts(lenet5.layer("thr2")) == 5 * 16


def test_sparse_luts_zero_nnz():
    layer = fc_120_84().layer("fc")
    p = sparse_profile("fc", (84, 120), 0)
    assert layer_luts(layer, LayerFold(Mode.UNROLLED_SPARSE, 84, 120), p) == 300


def test_sparse_needs_profile():
    layer = fc_120_84().layer("fc")
    with pytest.raises(MissingProfile):
        layer_luts(layer, LayerFold(Mode.UNROLLED_SPARSE, 84, 120), None)


@pytest.mark.parametrize("nnz", [0, 1, 1000, 5000, 10080])
def test_sparse_vs_dense_boundary(nnz):
    layer = fc_120_84().layer("fc")
    p = sparse_profile("fc", (84, 120), nnz)
    sparse = layer_luts(layer, LayerFold(Mode.UNROLLED_SPARSE, 84, 120), p)
    dense = layer_luts(layer, LayerFold(Mode.UNROLLED_DENSE, 84, 120))
    assert (sparse < dense) == (0.5 * nnz * 4 < 1.0 * 120 * 84 * 16)


@given(st.integers(0, 5000), st.integers(1, 8), st.integers(1, 8))
def test_sparse_luts_linear(k, wb, ab):
    layer = build_model("fc", (120,), [fc("fc", 84, wb=wb, ab=ab)], {"fc": np.ones((84, 120))}).layer("fc")
    c = CostCoefficients()
    slope = c.c_sparse * (wb + ab) / 2
    values = [sparse_luts(layer, n, c) for n in (0, 1, k, 2 * k)]
    assert values[0] == c.c_ctrl
    assert values[1] - values[0] == pytest.approx(slope)
    assert values[3] - values[2] == pytest.approx(values[2] - values[0])
    assert values[2] - values[0] == pytest.approx(slope * k)


def test_validate_config_examples(lenet5):
    assert validate_config(lenet5, all_ones_config(lenet5)) == []
    bad = all_ones_config(lenet5).with_entry("conv2", LayerFold(Mode.FOLDED, 5, 1))
    violations = validate_config(lenet5, bad)
    assert any("pe must divide fan_out" in v and "conv2" in v for v in violations)
    assert validate_config(lenet5, FoldingConfig(bad.entries, strict=False)) == []
    unrolled = all_ones_config(lenet5).with_entry("fc2", LayerFold(Mode.UNROLLED_SPARSE, 84, 1))
    assert any("fc2" in v for v in validate_config(lenet5, unrolled))
    unknown = all_ones_config(lenet5).with_entry("nope", FOLDED_ONES)
    assert any("nope" in v for v in validate_config(lenet5, unknown))
    with pytest.raises(InvalidFold):
        layer_cycles(lenet5.layer("conv2"), LayerFold(Mode.FOLDED, 5, 1))


def test_relaxed_folds_pad():
    layer = fc_120_84().layer("fc")
    assert layer_cycles(layer, LayerFold(Mode.FOLDED, 5, 7), strict=False) == 18 * 17


def test_next_fold_value():
    assert next_fold_value(1, 16, strict=True) == 2
    assert next_fold_value(4, 150, strict=True) == 5
    assert next_fold_value(16, 16, strict=True) is None
    # relaxed: smallest value that removes one fold
    assert next_fold_value(1, 10, strict=False) == 2
    assert next_fold_value(3, 10, strict=False) == 4
    assert next_fold_value(5, 10, strict=False) == 10


def test_monotone_over_all_divisor_pairs(lenet5):
    for layer in lenet5.weighted_layers:
        pes, simds = divisors(layer.fan_out), divisors(layer.fan_in)
        grid = np.array([[layer_cycles(layer, LayerFold(Mode.FOLDED, p, s)) for s in simds] for p in pes])
        assert (np.diff(grid, axis=0) <= 0).all() and (np.diff(grid, axis=1) <= 0).all()
        assert grid[0, 0] == layer.out_pixels * layer.fan_in * layer.fan_out


def test_estimate_aggregates(lenet5):
    cfg = all_ones_config(lenet5).with_entry("fc1", LayerFold(Mode.FOLDED, 4, 8))
    est = estimate(lenet5, cfg)
    assert est.ii_cycles == max(c.cycles for c in est.layers)
    assert est.latency_cycles == sum(c.cycles for c in est.layers)
    assert est.total_luts == pytest.approx(sum(layer_luts(l, cfg.entry(l.id)) for l in lenet5.layers))
    # additivity: dropping a layer removes exactly its luts
    for i, row in enumerate(est.layers):
        rest = sum(c.luts for j, c in enumerate(est.layers) if j != i)
        assert est.total_luts - row.luts == pytest.approx(rest)


def test_single_layer_estimate():
    est = estimate(fc_120_84(), FoldingConfig())
    assert est.bottleneck_layer_id == "fc"
    assert est.latency_cycles == est.ii_cycles


def test_bottleneck_ties_lowest_index():
    model = fc_model({"a": np.ones((4, 4)), "b": np.ones((4, 4))})
    assert estimate(model, FoldingConfig()).bottleneck_layer_id == "a"


def synthetic_estimate(cycles: int, clock_mhz: float = 200.0) -> CostEstimate:
    row = LayerCost("x", "FullyConnected", "Folded", 1, 1, cycles, 0.0)
    return CostEstimate((row,), FoldingConfig(clock_mhz=clock_mhz).clock_hz)


@given(st.integers(1, 10**7), st.sampled_from([100.0, 200.0, 250.0, 187.5, 333.3]))
def test_fps_times_ii_is_clock(ii, clock):
    est = synthetic_estimate(ii, clock)
    assert isinstance(est.throughput_fps, Fraction)
    assert est.throughput_fps * est.ii_cycles == FoldingConfig(clock_mhz=clock).clock_hz


def test_fps_identity_on_lenet5_configs(lenet5):
    for clock in (100.0, 200.0, 333.3):
        for cfg in (all_ones_config(lenet5, clock), unrolled_dense_config(lenet5, clock)):
            est = estimate(lenet5, cfg)
            assert est.throughput_fps * est.ii_cycles == cfg.clock_hz


def test_throughput_ratio_example():
    slow, fast = synthetic_estimate(240_000), synthetic_estimate(194_000)
    assert f"{throughput_ratio(fast, slow):.3f}" == "1.237"


def test_unrolled_dense_config(lenet5):
    est = estimate(lenet5, unrolled_dense_config(lenet5))
    assert est.cycles("fc1") == 1 and est.cycles("conv1") == 784


def test_config_roundtrip(lenet5, tmp_path):
    cfg = all_ones_config(lenet5, clock_mhz=150).with_entry("fc1", LayerFold(Mode.FOLDED, 4, 8))
    cfg = cfg.with_entry("conv1", LayerFold(Mode.UNROLLED_SPARSE, 6, 25))
    save_config(cfg, lenet5, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["fc1"] == {"mode": "Folded", "PE": 4, "SIMD": 8}
    assert doc["clock_mhz"] == 150
    again = load_config(tmp_path / "c.json", lenet5)
    assert again.normalized(lenet5) == cfg.normalized(lenet5)
    other = fc_model({"a": np.ones((1, 1))})
    with pytest.raises(ChecksumMismatch):
        load_config(tmp_path / "c.json", other)


def test_config_parse_errors(tmp_path):
    (tmp_path / "c.json").write_text('{"fc1": {"mode": "Sideways", "PE": 1, "SIMD": 1}}')
    with pytest.raises(ParseError):
        load_config(tmp_path / "c.json")


def test_coefficients(tmp_path, monkeypatch):
    assert load_coefficients() == CostCoefficients()
    (tmp_path / "k.json").write_text('{"c_mac": 2, "c_ctrl": 10, "c_sparse": 1, "c_pool": 3}')
    assert load_coefficients(tmp_path / "k.json").c_mac == 2.0
    monkeypatch.setenv("FOLDSPARSE_COEFFS", str(tmp_path / "k.json"))
    assert load_coefficients().c_ctrl == 10.0
    with pytest.raises(ValidationError):
        CostCoefficients(c_mac=0)

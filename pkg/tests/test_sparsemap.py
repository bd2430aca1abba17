import numpy as np
import pytest

from foldsparse.cost import FoldingConfig, LayerFold, Mode, all_ones_config
from foldsparse.dse import Budget, run_dse
from foldsparse.errors import MissingProfile, MissingQuantSpec
from foldsparse.model import checksum_model
from foldsparse.pruning import LayerMask, SparsityProfile, global_magnitude_prune
from foldsparse.quant import QuantSpec, quant_specs
from foldsparse.sparsemap import (
    LayerSparseMap,
    export_sparse_map,
    read_sparse_map,
    verify_map_against_inference,
    write_sparse_map,
)
from foldsparse.synth import random_input

from .conftest import fc_model


def sparse_cfg(model, *ids):
    cfg = FoldingConfig()
    for lid in ids:
        layer = model.layer(lid)
        cfg = cfg.with_entry(lid, LayerFold(Mode.UNROLLED_SPARSE, layer.fan_out, layer.fan_in))
    return cfg


def profile_of(**masks):
    return SparsityProfile(0.0, 0.0, {k: LayerMask(np.asarray(v, bool)) for k, v in masks.items()})


def test_hand_built_2x2_map():
    # weights quantize to [[3, 1], [2, -2]] at scale 1
    model = fc_model({"L": [[3.0, 1.0], [2.0, -2.0]]})
    p = profile_of(L=[[1, 0], [0, 1]])
    smap = export_sparse_map(model, p, sparse_cfg(model, "L"), quant_specs(model))
    assert smap["L"].neurons == ((0, ((0, 3),)), (1, ((1, -2),)))
    assert smap["L"].connections == 2


def test_dense_limit_and_empty_rows():
    w = np.arange(1, 13, dtype=float).reshape(3, 4) / 4
    model = fc_model({"L": w})
    specs = {"L": QuantSpec(4, 4, 0.25)}
    full = export_sparse_map(model, profile_of(L=np.ones((3, 4))), sparse_cfg(model, "L"), specs)
    assert full["L"].connections == 12
    mask = np.ones((3, 4), bool)
    mask[1] = False
    partial = export_sparse_map(model, profile_of(L=mask), sparse_cfg(model, "L"), specs)
    assert partial["L"].neurons[1] == (1, ())
    assert [o for o, _ in partial["L"].neurons] == [0, 1, 2]


def test_quantized_zero_drops_counted():
    model = fc_model({"L": [[0.01, 2.0], [3.0, -0.02]]})
    smap = export_sparse_map(model, profile_of(L=np.ones((2, 2))), sparse_cfg(model, "L"), quant_specs(model))
    m = smap["L"]
    assert m.profile_nnz == 4 and m.quantized_zero_drops == 2 and m.connections == 2
    assert all(q != 0 for _, conns in m.neurons for _, q in conns)


def test_map_invariants_on_lenet5(lenet5):
    p = global_magnitude_prune(lenet5, 0.845)
    smap = export_sparse_map(lenet5, p, sparse_cfg(lenet5, "conv1", "conv2", "fc1"), quant_specs(lenet5))
    for lid, m in smap.items():
        mask = p.per_layer[lid].mask
        assert m.connections == p.nnz(lid) - m.quantized_zero_drops
        for o, conns in m.neurons:
            idx = [i for i, _ in conns]
            assert idx == sorted(set(idx))
            assert set(idx) <= set(np.flatnonzero(mask[o]))


def test_missing_inputs():
    model = fc_model({"L": [[1.0, 2.0]]})
    with pytest.raises(MissingProfile):
        export_sparse_map(model, None, sparse_cfg(model, "L"), quant_specs(model))
    with pytest.raises(MissingQuantSpec):
        export_sparse_map(model, profile_of(L=[[1, 1]]), sparse_cfg(model, "L"), {})


def test_roundtrip(lenet5, tmp_path):
    p = global_magnitude_prune(lenet5, 0.845)
    smap = export_sparse_map(lenet5, p, sparse_cfg(lenet5, "conv2", "fc3"), quant_specs(lenet5))
    write_sparse_map(smap, tmp_path, checksum_model(lenet5))
    assert read_sparse_map(tmp_path) == smap


def test_verify_fresh_lenet5_map(lenet5):
    result = run_dse(lenet5, 0.845, Budget(610_400, 872_000))
    specs = quant_specs(lenet5)
    smap = export_sparse_map(lenet5, result.profile, result.final_config, specs)
    assert set(smap) == {"conv1", "conv2"}
    rng = np.random.default_rng(11)
    inputs = [random_input(rng, lenet5) for _ in range(100)]
    outcome = verify_map_against_inference(smap, lenet5, result.profile, specs, inputs)
    assert outcome.passed and outcome.checked_inputs == 100


def test_verify_detects_perturbation():
    model = fc_model({"L": [[3.0, 1.0], [2.0, -2.0]]})
    p = profile_of(L=[[1, 1], [0, 1]])
    specs = quant_specs(model)
    m = export_sparse_map(model, p, sparse_cfg(model, "L"), specs)["L"]
    (o0, c0), (o1, c1) = m.neurons
    bad = LayerSparseMap(**{**m.__dict__, "neurons": ((o0, c0), (o1, ((c1[0][0], c1[0][1] + 1),)))})
    outcome = verify_map_against_inference({"L": bad}, model, p, specs, [np.array([1, 1])])
    assert not outcome.passed and "neuron 1" in outcome.detail


def test_verify_vacuous(lenet5):
    outcome = verify_map_against_inference({}, lenet5, None, {}, [])
    assert outcome.passed and outcome.checked_inputs == 0


def test_no_sparse_layers_exports_nothing(lenet5):
    assert export_sparse_map(lenet5, None, all_ones_config(lenet5), quant_specs(lenet5)) == {}

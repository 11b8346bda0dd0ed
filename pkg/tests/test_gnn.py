import numpy as np
import pytest

import sysgnn.gnn as gnn_mod

from sysgnn.config import EngineConfig
from sysgnn.datasets import gen_powerlaw
from sysgnn.engine import Accelerator
from sysgnn.gnn import (Graph, LayerError, LayerSpec, VerificationError, build_model, gat_attention,
                        gat_layer, gcn_layer, gcn_normalize, gin_layer, reference_inference,
                        run_inference, sage_layer)
from sysgnn.matrix import ShapeError, SparseTile, spmm_oracle
from sysgnn.reference import gat_attention_ref, max_rel_error

CFG = EngineConfig(tile_rows=8, tile_cols=8)


def two_nodes(h):
    return Graph.from_edges(2, [(0, 1)], np.asarray(h, dtype=np.float32))


def spec(model, w, **kw):
    w = np.asarray(w, dtype=np.float32)
    if model == "gat" and "a1" not in kw:
        rng = np.random.default_rng(0)
        kw["a1"] = rng.standard_normal(w.shape[1])
        kw["a2"] = rng.standard_normal(w.shape[1])
    return LayerSpec(model, w, **kw)


def random_layers(rng, model, dims, **kw):
    out = []
    for i, o in zip(dims, dims[1:]):
        extra = dict(kw)
        if model == "gat":
            extra.update(a1=rng.standard_normal(o), a2=rng.standard_normal(o))
        out.append(LayerSpec(model, rng.standard_normal((i, o)) / np.sqrt(i),
                             rng.standard_normal(o) * 0.1, activation="relu", **extra))
    return out


# normalization

def test_gcn_normalize_two_nodes():
    assert gcn_normalize(two_nodes([[1], [3]])).to_dense().tolist() == [[0.5, 0.5], [0.5, 0.5]]


def test_gcn_normalize_single_node():
    g = Graph(1, SparseTile(1, 1), np.ones((1, 1)))
    assert gcn_normalize(g).to_dense().tolist() == [[1.0]]


def test_gcn_normalize_symmetric():
    g = gen_powerlaw(30, seed=1)
    n = gcn_normalize(g).to_dense()
    assert np.allclose(n, n.T)


# hand examples

def test_gcn_two_nodes():
    out = gcn_layer(two_nodes([[1], [3]]), spec("gcn", [[1]]), [[1], [3]], Accelerator(CFG))
    assert out.tolist() == [[2.0], [2.0]]


def test_gcn_identity_weight():
    g = gen_powerlaw(20, seed=2, feature_dim=4)
    out = gcn_layer(g, spec("gcn", np.eye(4)), g.features, Accelerator(CFG))
    assert np.allclose(out, spmm_oracle(gcn_normalize(g), g.features), rtol=1e-5, atol=1e-6)


def test_sage_mean_then_normalize():
    # node 0 has neighbours with features 2 and 4, self 3
    g = Graph.from_edges(3, [(0, 1), (0, 2)], np.array([[3.0], [2.0], [4.0]]))
    out = sage_layer(g, spec("sage", [[1]]), g.features, Accelerator(CFG))
    assert out[0, 0] == pytest.approx(1.0)


def test_sage_isolated_node():
    g = Graph(1, SparseTile(1, 1), np.array([[3.0, 4.0]]))
    out = sage_layer(g, spec("sage", np.eye(2)), g.features, Accelerator(CFG))
    assert np.allclose(out, [[0.6, 0.8]])


def test_sage_dual_path_agrees():
    rng = np.random.default_rng(3)
    g = gen_powerlaw(60, seed=3, feature_dim=8)
    w = rng.standard_normal((8, 5))
    a = sage_layer(g, spec("sage", w, sage_path="direct"), g.features, Accelerator(CFG))
    b = sage_layer(g, spec("sage", w, sage_path="weighted"), g.features, Accelerator(CFG))
    assert max_rel_error(a, b) <= 1e-6


def test_gin_eps_one():
    # node 0: self 2, neighbours 4 + 6 = 10 -> (1+1)*2 + 10 = 14
    g = Graph.from_edges(3, [(0, 1), (0, 2)], np.array([[2.0], [4.0], [6.0]]))
    out = gin_layer(g, spec("gin", [[1]], eps=1.0), g.features, Accelerator(CFG))
    assert out[0, 0] == 14.0


def test_gin_no_edges_is_mlp():
    g = Graph(3, SparseTile(3, 3), np.arange(6, dtype=np.float32).reshape(3, 2))
    w = np.array([[1.0, 2.0], [3.0, -1.0]])
    out = gin_layer(g, spec("gin", w), g.features, Accelerator(CFG))
    assert np.array_equal(out, g.features @ w)


def test_gin_mlp_chain():
    g = gen_powerlaw(12, seed=4, feature_dim=3)
    w1, w2 = np.eye(3), np.full((3, 2), 0.5)
    s = LayerSpec("gin", w1, mlp=((w2, None),))
    assert s.out_dim == 2
    out, _ = run_inference(g, [s], CFG)
    assert out.shape == (12, 2)


def test_gat_single_node():
    g = Graph(1, SparseTile(1, 1), np.array([[1.5, -2.0]]))
    s = spec("gat", np.eye(2))
    att = gat_attention(g, s, g.features, Accelerator(CFG))
    assert att.to_dense().tolist() == [[1.0]]
    assert np.allclose(gat_layer(g, s, g.features, Accelerator(CFG)), g.features)


def test_gat_two_nodes_equal_logits():
    # identical node features give identical logits in each row
    h = np.array([[1.0, 2.0], [1.0, 2.0]])
    g = two_nodes(h)
    s = spec("gat", np.eye(2))
    att = gat_attention(g, s, h, Accelerator(CFG))
    # the two rows sit in different Strassen quadrants, so float32 rounding may differ slightly
    assert np.allclose(att.to_dense(), 0.5, atol=1e-6)
    out = gat_layer(g, s, h, Accelerator(CFG))
    assert np.allclose(out, 0.5 * (h[0] + h[1]), atol=1e-6)


def test_gat_attention_against_masked_softmax():
    rng = np.random.default_rng(5)
    g = gen_powerlaw(50, seed=5, feature_dim=6)
    s = spec("gat", rng.standard_normal((6, 4)))
    z = g.features @ s.weight
    att = gat_attention(g, s, z, Accelerator(CFG)).to_dense()
    assert np.allclose(att.sum(axis=1), 1.0, atol=1e-6)
    assert (att[att != 0] > 0).all()
    want = gat_attention_ref(g.dense_adjacency(), z.astype(np.float64), s.a1, s.a2)
    assert np.allclose(att, want, atol=1e-6)


# multi-layer runs

@pytest.mark.parametrize("model", ["gcn", "sage", "gin", "gat"])
@pytest.mark.parametrize("strassen", [True, False])
def test_two_layers_match_reference(model, strassen):
    rng = np.random.default_rng(6)
    g = gen_powerlaw(100, seed=6, feature_dim=16)
    layers = random_layers(rng, model, [16, 12, 8])
    out, rep = run_inference(g, layers, EngineConfig(strassen=strassen))
    assert max_rel_error(out, reference_inference(g, layers)) <= 1e-4
    assert rep.verification["end_to_end"] <= 1e-4
    assert 0 < rep.totals.utilization <= 1


def test_gin_identity_weights_is_repeated_sums():
    g = gen_powerlaw(30, seed=7, feature_dim=3)
    layers = [LayerSpec("gin", np.eye(3)), LayerSpec("gin", np.eye(3))]
    out, _ = run_inference(g, layers, CFG)
    a_hat = g.dense_adjacency() + np.eye(30)
    assert np.allclose(out, a_hat @ a_hat @ g.features, rtol=1e-5)


def test_packing_toggle_changes_cycles_not_values():
    rng = np.random.default_rng(8)
    g = gen_powerlaw(120, seed=8, feature_dim=8)
    layers = random_layers(rng, "gcn", [8, 8])
    on, r_on = run_inference(g, layers, EngineConfig(packing=True))
    off, r_off = run_inference(g, layers, EngineConfig(packing=False))
    assert np.array_equal(on, off)
    assert r_on.phase_totals("aggregation").cycles != r_off.phase_totals("aggregation").cycles


def test_feedback_path_matches():
    layers = [spec("gcn", [[1]])]
    g = two_nodes([[1], [3]])
    a, _ = run_inference(g, layers, EngineConfig(feedback=True))
    b, _ = run_inference(g, layers, EngineConfig(feedback=False))
    assert a.tolist() == b.tolist() == [[2.0], [2.0]]


@pytest.mark.parametrize("model", ["gcn", "sage", "gin", "gat"])
def test_permutation_equivariance(model):
    rng = np.random.default_rng(9)
    g = gen_powerlaw(40, seed=9, feature_dim=5)
    layers = random_layers(rng, model, [5, 4])
    base, _ = run_inference(g, layers, CFG)
    for _ in range(3):
        perm = rng.permutation(40)
        out, _ = run_inference(g.permute(perm), layers, CFG)
        assert max_rel_error(out, base[perm]) <= 1e-5


# errors

def test_layer_dims_must_chain():
    g = two_nodes([[1], [3]])
    with pytest.raises(LayerError, match="layer 1"):
        run_inference(g, [spec("gcn", [[1, 1]]), spec("gcn", [[1]])], CFG)


def test_shape_error_on_wrong_features():
    with pytest.raises(ShapeError):
        gcn_layer(two_nodes([[1], [3]]), spec("gcn", np.eye(2)), [[1], [3]])


def test_verification_failure_is_reported(monkeypatch):
    good = gnn_mod.LAYERS["gcn"]
    monkeypatch.setitem(gnn_mod.LAYERS, "gcn", lambda *a: good(*a) + 1)
    with pytest.raises(VerificationError, match=r"layer 0 \(gcn\).*deviates"):
        run_inference(two_nodes([[1], [3]]), [spec("gcn", [[1]])], CFG)


def test_unexpected_failure_names_layer_and_phase(monkeypatch):

    def broken(g, spec_, h, acc):
        acc.gemm(h, spec_.weight)
        raise RuntimeError("boom")

    monkeypatch.setitem(gnn_mod.LAYERS, "gcn", broken)
    with pytest.raises(LayerError, match="layer 0 \\(gcn\\) failed during transformation: boom"):
        run_inference(two_nodes([[1], [3]]), [spec("gcn", [[1]])], CFG)


@pytest.mark.parametrize("kw", [{"activation": "tanh"}, {"slope": 1.5}, {"eps": float("inf")},
                                {"sage_path": "other"}])
def test_layer_spec_validation(kw):
    with pytest.raises(ValueError):
        LayerSpec("sage", np.eye(2), **kw)


def test_layer_spec_rejects_unknown_model_and_missing_attention():
    with pytest.raises(ValueError):
        LayerSpec("mlp", np.eye(2))
    with pytest.raises(ValueError):
        LayerSpec("gat", np.eye(2))
    with pytest.raises(ShapeError):
        LayerSpec("gcn", np.eye(2), bias=[1, 2, 3])


def test_build_model(tmp_path):
    layers = build_model({"layers": [{"model": "GraphSAGE", "out": 4, "bias": True},
                                     {"model": "gat", "out": 4, "init": "identity"}]}, 6, seed=1)
    assert [s.model for s in layers] == ["sage", "gat"]
    assert layers[0].weight.shape == (6, 4)
    assert np.array_equal(layers[1].weight, np.eye(4))
    again = build_model({"layers": [{"model": "GraphSAGE", "out": 4, "bias": True}]}, 6, seed=1)
    assert np.array_equal(again[0].weight, layers[0].weight)
    with pytest.raises(ValueError):
        build_model({"layers": [{"model": "gcn", "out": 3, "init": "identity"}]}, 6)

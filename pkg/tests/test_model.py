import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetgfl import autodiff as ad
from hetgfl.autodiff import DegenerateRowError, Tensor, grad_check
from hetgfl.hetgraph import HeteroGraph
from hetgfl.layers import AggMode
from hetgfl.model import (
    CheckpointError,
    ModelConfig,
    embed,
    forward,
    graph_meta,
    init_for_graph,
    load_checkpoint,
    loss,
    predict,
    regularizer,
    save_checkpoint,
)
from conftest import random_graph, with_all_train


def cfg(**kw):
    base = dict(dims=[4, 4, 3], d_e=3, seed=0)
    base.update(kw)
    return ModelConfig(**base)


# ---- config ----------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [dict(dims=[4]), dict(dims=[4, 0]), dict(weight_decay=-1.0), dict(loss_mode="mse"), dict(ablations={"no_x"})],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        cfg(**kw)


def test_config_dict_round_trip():
    c = cfg(ablations={"no-ei", "no_l2"}, agg_mode="node-residual")
    assert c.ablations == frozenset({"no_ei", "no_l2"})
    assert ModelConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


# ---- forward -----------------------------------------------------------------


def test_output_rows_unit_norm(tiny_graph):
    c = cfg()
    O, Z = forward(tiny_graph, init_for_graph(tiny_graph, c), c)
    assert np.allclose(np.linalg.norm(O.values, axis=1), 1.0, atol=1e-12)
    assert np.allclose(Z.values.sum(1), 1.0, atol=1e-12)


def test_single_node_one_layer_hand_trace():
    g = HeteroGraph(np.array([0]), {0: np.array([[0.3, -0.7]])}, np.zeros((0, 3), np.int64),
                    np.array([[1.0, 0.0]]), np.array([True]), 1, 1)
    c = ModelConfig(dims=[2, 2], d_e=2, agg_mode=AggMode.NODE_RESIDUAL, seed=4)
    p = init_for_graph(g, c)
    _, Z = forward(g, p, c)

    def lrelu(x):
        return np.where(x >= 0, x, 0.01 * x)

    h0 = lrelu(g.features[0] @ p.projection.weights[0].values + p.projection.biases[0].values)
    h1 = lrelu(h0)  # no neighbours: residual only
    o = h1 / np.linalg.norm(h1)
    logits = o @ p.W_z.values
    want = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(Z.values, want, rtol=0, atol=1e-14)


def test_sigmoid_mode_range(tiny_graph):
    c = cfg(loss_mode="sigmoid-bce")
    _, Z = forward(tiny_graph, init_for_graph(tiny_graph, c), c)
    assert np.all((Z.values > 0) & (Z.values < 1))
    assert not np.allclose(Z.values.sum(1), 1.0)


def test_no_l2_changes_output_but_not_shapes(tiny_graph):
    a, b = cfg(), cfg(ablations={"no_l2"})
    p = init_for_graph(tiny_graph, a)
    Oa, Za = forward(tiny_graph, p, a)
    Ob, Zb = forward(tiny_graph, p, b)
    assert Oa.shape == Ob.shape and Za.shape == Zb.shape
    assert not np.allclose(Oa.values, Ob.values)
    assert np.allclose(Oa.values, Ob.values / np.linalg.norm(Ob.values, axis=1, keepdims=True))


def test_no_nle_uses_linear_projection(tiny_graph):
    c = cfg(ablations={"no_nle"}, dims=[4, 4])
    p = init_for_graph(tiny_graph, c)
    # zero out the layer so the projection shows through the residual
    lp = p.layers[0]
    lp.W.values[...] = 0.0
    H = embed(tiny_graph, p, c).values
    t = 0
    idx = tiny_graph.type_index[t]
    lin = tiny_graph.features[t] @ p.projection.weights[t].values + p.projection.biases[t].values
    assert np.allclose(H[idx], np.where(lin >= 0, lin, 0.01 * lin))


def test_no_fgl_ignores_edge_table(tiny_graph):
    c = cfg(ablations={"no_fgl"})
    p = init_for_graph(tiny_graph, c)
    _, Z1 = forward(tiny_graph, p, c)
    p.table.embeddings.values[...] = np.random.default_rng(9).normal(size=p.table.embeddings.shape)
    _, Z2 = forward(tiny_graph, p, c)
    assert np.array_equal(Z1.values, Z2.values)


def test_no_ei_table_frozen_and_per_edge(tiny_graph):
    c = cfg(ablations={"no_ei"})
    p = init_for_graph(tiny_graph, c)
    assert "edge.table" not in p.named()
    assert "edge.table" in p.named(trainable_only=False)
    assert p.table.embeddings.shape[0] == tiny_graph.n_edges


def test_degenerate_output_row_raises():
    g = with_all_train(random_graph(0))
    c = cfg()
    p = init_for_graph(g, c)
    for t in p.named().values():
        t.values[...] = 0.0
    with pytest.raises(DegenerateRowError):
        forward(g, p, c)


def test_forward_deterministic(tiny_graph):
    c = cfg()
    Za = forward(tiny_graph, init_for_graph(tiny_graph, c), c)[1].values
    Zb = forward(tiny_graph, init_for_graph(tiny_graph, c), c)[1].values
    assert np.array_equal(Za, Zb)


# ---- loss ------------------------------------------------------------------


def test_loss_uniform_four_classes():
    Z = Tensor(np.full((1, 4), 0.25))
    assert loss(Z, np.array([[0, 1, 0, 0]]), np.array([True])).item() == pytest.approx(math.log(4))


def test_loss_perfect_predictions_near_zero():
    Y = np.eye(3)
    L = loss(Tensor(Y.copy()), Y, np.ones(3, bool)).item()
    assert 0.0 <= L <= 3 * -math.log(1 - 1e-12) + 1e-15


def test_loss_clamps_zero_probability():
    L = loss(Tensor([[0.0, 1.0]]), np.array([[1, 0]]), np.array([True])).item()
    assert L == pytest.approx(-math.log(1e-12))


def test_loss_errors():
    with pytest.raises(ValueError):
        loss(Tensor([[0.5, 0.5]]), np.array([[1, 0]]), np.array([False]))
    with pytest.raises(FloatingPointError):
        loss(Tensor([[np.nan, 0.5]]), np.array([[1, 0]]), np.array([True]))


def test_regularizer_zero_params(tiny_graph):
    c = cfg()
    p = init_for_graph(tiny_graph, c)
    for t in p.named().values():
        t.values[...] = 0.0
    assert regularizer(p).item() == 0.0
    Z = Tensor(np.full((tiny_graph.n, 2), 0.5))
    base = loss(Z, tiny_graph.labels, tiny_graph.masks["train"]).item()
    assert loss(Z, tiny_graph.labels, tiny_graph.masks["train"], p, 0.3).item() == base


def test_regularizer_squared_and_unsquared(tiny_graph):
    c = cfg()
    p = init_for_graph(tiny_graph, c)
    sq = sum(float((t.values ** 2).sum()) for t in p.named().values())
    assert regularizer(p).item() == pytest.approx(sq, rel=1e-12)
    assert regularizer(p, unsquared=True).item() == pytest.approx(math.sqrt(sq), rel=1e-12)


def test_bce_loss_value():
    Z = Tensor([[0.8, 0.3]])
    L = loss(Z, np.array([[1, 0]]), np.array([True]), mode="sigmoid-bce").item()
    assert L == pytest.approx(-math.log(0.8) - math.log(0.7))


@given(st.integers(0, 10_000))
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(6, 3)) * 4
    Z = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    Y = np.eye(3)[rng.integers(3, size=6)]
    mask = rng.random(6) < 0.7 if seed % 2 else np.ones(6, bool)
    mask[rng.integers(6)] = True  # an empty mask is an error, not a zero loss
    assert loss(Tensor(Z), Y, mask).item() >= 0.0


def test_loss_invariant_to_node_relabeling():
    g = with_all_train(random_graph(11, n=9))
    c = cfg()
    p = init_for_graph(g, c)
    _, Z = forward(g, p, c)
    base = loss(Z, g.labels, g.masks["train"]).item()

    perm = np.random.default_rng(0).permutation(g.n)
    inv = np.argsort(perm)  # old id -> new id
    node_type = g.node_type[perm]
    # rows of features[t] follow ascending node id of that type
    features = {}
    for t in g.features:
        old_ids = g.type_index[t]
        row_of = {int(o): r for r, o in enumerate(old_ids)}
        new_ids = np.flatnonzero(node_type == t)
        features[t] = g.features[t][[row_of[int(perm[k])] for k in new_ids]]
    edges = g.edges.copy()
    edges[:, 0] = inv[g.edges[:, 0]]
    edges[:, 1] = inv[g.edges[:, 1]]
    h = with_all_train(HeteroGraph(node_type, features, edges, g.labels[perm], g.labeled[perm], 2, g.n_edge_types))
    _, Zh = forward(h, p, c)
    assert np.allclose(Zh.values, Z.values[perm], atol=1e-12)
    assert loss(Zh, h.labels, h.masks["train"]).item() == pytest.approx(base, rel=1e-12)


def test_predict_modes():
    Z = np.array([[0.2, 0.7, 0.1], [0.6, 0.5, 0.4]])
    assert predict(Z).tolist() == [1, 0]
    assert predict(Z, "sigmoid-bce").tolist() == [[0, 1, 0], [1, 1, 0]]


# ---- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("ablations", [set(), {"no_fgl"}, {"no_l2"}, {"no_nle"}, {"no_ei"}])
@pytest.mark.parametrize("mode", ["softmax-ce", "sigmoid-bce"])
def test_model_gradient_check(ablations, mode):
    g = with_all_train(random_graph(3, n=6, n_node_types=2, n_edge_types=3))
    c = cfg(ablations=ablations, loss_mode=mode, weight_decay=0.01)
    p = init_for_graph(g, c)
    params = list(p.named().values())

    def f():
        _, Z = forward(g, p, c)
        return loss(Z, g.labels, g.masks["train"], p, c.weight_decay, c.loss_mode)

    assert grad_check(f, params, eps=1e-5) <= 1e-4


# ---- checkpoints ---------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path, tiny_graph):
    c = cfg(ablations={"no_ei"})
    p = init_for_graph(tiny_graph, c)
    for t in p.named().values():
        t.values[...] += np.random.default_rng(0).normal(size=t.shape) * 1e-3
    path = tmp_path / "ck.json"
    save_checkpoint(path, p, c, graph_meta(tiny_graph))
    q, c2, meta = load_checkpoint(path)
    assert c2 == c and meta == graph_meta(tiny_graph)
    pa, qa = p.named(False), q.named(False)
    assert set(pa) == set(qa)
    for k in pa:
        assert np.array_equal(pa[k].values, qa[k].values)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(format="other"),
        lambda d: d["tensors"].pop("W_z"),
        lambda d: d["tensors"]["W_z"].update(shape=[1, 1]),
        lambda d: d["meta"].pop("n_classes"),
    ],
)
def test_checkpoint_corruption(tmp_path, tiny_graph, mutate):
    c = cfg()
    path = tmp_path / "ck.json"
    save_checkpoint(path, init_for_graph(tiny_graph, c), c, graph_meta(tiny_graph))
    doc = json.loads(path.read_text())
    mutate(doc)
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path, tiny_graph):
    c = cfg()
    path = tmp_path / "ck.json"
    save_checkpoint(path, init_for_graph(tiny_graph, c), c, graph_meta(tiny_graph))
    path.write_text(path.read_text()[:100])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)

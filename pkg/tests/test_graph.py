import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsebo.autodiff.rng import RngStream
from gsebo.graph import (
    DataSplit,
    DatasetBundle,
    Graph,
    add_self_loops,
    degrees,
    generate_sbm,
    inject_inter_class_edges,
    inter_class_ratio,
    random_split,
    row_norm_values,
    sym_norm_values,
)
from gsebo.exceptions import ContractError


def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


def test_add_self_loops_examples():
    empty = Graph.from_edges(3, [])
    looped = add_self_loops(empty)
    assert looped.nnz == 3 and looped.has_self_loops
    assert add_self_loops(Graph.from_edges(2, [(0, 1)])).nnz == 4
    with pytest.raises(ContractError):
        add_self_loops(looped)


def test_degrees_examples():
    assert np.array_equal(degrees(add_self_loops(Graph.from_edges(1, []))), [1])
    tri = add_self_loops(Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)]))
    assert np.array_equal(degrees(tri), [3, 3, 3])
    assert degrees(tri).sum() == tri.nnz


def test_sym_norm_examples():
    assert np.array_equal(sym_norm_values(add_self_loops(Graph.from_edges(1, []))), [1.0])
    assert np.array_equal(sym_norm_values(add_self_loops(Graph.from_edges(2, [(0, 1)]))), [0.5] * 4)
    g = add_self_loops(path3())
    vals = sym_norm_values(g)
    p = g.pattern
    center_leaf = (p.rows == 1) ^ (p.col_indices == 1)
    # hand arithmetic: d_center = 3, d_leaf = 2
    assert np.allclose(vals[center_leaf], 1 / np.sqrt(6), rtol=1e-15)
    with pytest.raises(ContractError):
        sym_norm_values(path3())


def test_row_norm_examples():
    star = Graph.from_edges(5, [(0, i) for i in range(1, 5)])
    vals = row_norm_values(star)
    p = star.pattern
    assert np.array_equal(vals[p.rows == 0], [0.25] * 4)
    assert np.array_equal(vals[p.rows != 0], [1.0] * 4)
    sums = np.bincount(p.rows, weights=vals, minlength=5)
    assert np.allclose(sums, 1.0)
    with pytest.raises(ContractError):
        row_norm_values(add_self_loops(star))


def test_row_norm_isolated_node_is_not_fatal():
    g = Graph.from_edges(3, [(0, 1)])
    assert np.array_equal(row_norm_values(g), [1.0, 1.0])


def test_inter_class_ratio_examples():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert inter_class_ratio(g, np.zeros(4, int)) == 0.0
    bip = Graph.from_edges(4, [(0, 2), (0, 3), (1, 2), (1, 3)])
    assert inter_class_ratio(bip, np.array([0, 0, 1, 1])) == 1.0


def test_graph_rejects_bad_edges():
    with pytest.raises(ContractError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(ContractError):
        Graph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(ContractError):
        Graph.from_edges(3, [(0, 3)])


def test_edges_are_canonical():
    g = Graph.from_edges(4, [(3, 1), (2, 0), (1, 0)])
    assert g.edges().tolist() == [[0, 1], [0, 2], [1, 3]]
    assert g.num_edges == 3


def test_split_invariants():
    with pytest.raises(ContractError):
        DataSplit([0, 1], [1], [2])
    with pytest.raises(ContractError):
        DataSplit([], [1], [2])
    s = random_split(100, RngStream(0))
    assert (s.train.size, s.val.size, s.test.size) == (10, 20, 70)


def test_bundle_invariants():
    g = path3()
    s = DataSplit([0], [1], [2])
    with pytest.raises(ContractError):
        DatasetBundle(g, np.zeros((2, 1)), [0, 0, 0], s)
    with pytest.raises(ContractError):
        DatasetBundle(g, np.zeros((3, 1)), [0, 0, 2], s, num_classes=2)
    with pytest.raises(ContractError):
        DatasetBundle(g, np.full((3, 1), np.nan), [0, 0, 0], s)


def test_inject_examples():
    b = generate_sbm(60, 3, 0.2, 0.0, rng=RngStream(1))
    same = inject_inter_class_edges(b.graph, b.labels, 0, RngStream(2))
    assert np.array_equal(same.edges(), b.graph.edges())
    noisy = inject_inter_class_edges(b.graph, b.labels, 50, RngStream(2))
    assert noisy.num_edges == b.graph.num_edges + 50
    old = {tuple(e) for e in b.graph.edges().tolist()}
    added = [e for e in noisy.edges().tolist() if tuple(e) not in old]
    assert len(added) == 50
    assert all(b.labels[u] != b.labels[v] for u, v in added)
    again = inject_inter_class_edges(b.graph, b.labels, 50, RngStream(2))
    assert np.array_equal(again.edges(), noisy.edges())


def test_inject_errors():
    g = Graph.from_edges(4, [(0, 1)])
    with pytest.raises(ContractError):
        inject_inter_class_edges(g, np.zeros(4, int), 1, RngStream(0))
    with pytest.raises(ContractError):
        inject_inter_class_edges(g, np.array([0, 0, 1, 1]), 5, RngStream(0))


def test_inject_keeps_self_loops():
    g = add_self_loops(Graph.from_edges(4, [(0, 1)]))
    out = inject_inter_class_edges(g, np.array([0, 0, 1, 1]), 2, RngStream(0))
    assert out.has_self_loops and out.num_edges == 3


def test_sbm_examples():
    b = generate_sbm(90, 3, 0.1, 0.0, rng=RngStream(5))
    assert inter_class_ratio(b.graph, b.labels) == 0.0
    b1 = generate_sbm(90, 3, 0.1, 0.02, rng=RngStream(5))
    b2 = generate_sbm(90, 3, 0.1, 0.02, rng=RngStream(5))
    assert np.array_equal(b1.graph.edges(), b2.graph.edges())
    assert np.array_equal(b1.features, b2.features)


def test_sbm_uniform_probability_ratio():
    # Monte-Carlo: with p_intra == p_inter each pair is inter-class w.p. ~(c-1)/c
    b = generate_sbm(500, 3, 0.05, 0.05, rng=RngStream(9))
    ratio = inter_class_ratio(b.graph, b.labels)
    expected = (3 - 1) / 3
    assert abs(ratio - expected) / expected < 0.05


def test_sbm_errors():
    with pytest.raises(ContractError):
        generate_sbm(30, 1, 0.1, 0.1)
    with pytest.raises(ContractError):
        generate_sbm(30, 2, 1.5, 0.1)


# ---- properties ------------------------------------------------------------


@st.composite
def labelled_graphs(draw):
    n = draw(st.integers(4, 30))
    seed = draw(st.integers(0, 2**31))
    gen = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = gen.uniform(size=iu.size) < draw(st.floats(0.0, 0.5))
    labels = gen.integers(0, draw(st.integers(2, 4)), size=n)
    labels[:2] = [0, 1]
    return Graph.from_edges(n, np.stack([iu[keep], ju[keep]], 1)), labels


@settings(max_examples=60, deadline=None)
@given(labelled_graphs(), st.integers(1, 5), st.integers(0, 1000))
def test_injection_strictly_increases_inter_ratio(gl, k, seed):
    g, labels = gl
    iu, ju = np.triu_indices(g.n, 1)
    existing = {tuple(e) for e in g.edges().tolist()}
    free = sum(1 for u, v in zip(iu, ju) if labels[u] != labels[v] and (u, v) not in existing)
    k = min(k, free)
    if k == 0:
        return
    before = inter_class_ratio(g, labels)
    if before == 1.0:
        return  # already saturated; strict growth is impossible
    after = inter_class_ratio(inject_inter_class_edges(g, labels, k, RngStream(seed)), labels)
    assert after > before


@settings(max_examples=40, deadline=None)
@given(labelled_graphs())
def test_sym_norm_range_and_purity(gl):
    g, labels = gl
    edges_before = g.edges().copy()
    labels_before = labels.copy()
    vals = sym_norm_values(add_self_loops(g))
    assert np.all((vals > 0) & (vals <= 1))
    inject_inter_class_edges(g, labels, 0, RngStream(0))
    assert np.array_equal(g.edges(), edges_before)
    assert np.array_equal(labels, labels_before)

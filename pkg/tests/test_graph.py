import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings

from polcm import fixtures
from polcm.graph import (
    GraphError,
    PolcmGraph,
    d_separated,
    enumerate_simple_treks,
    load_graph,
    loose_pure_children,
    neighbours,
    parents,
    pure_children,
)

from helpers import dags


def to_nx(g):
    h = nx.DiGraph()
    h.add_nodes_from(range(g.num_nodes))
    h.add_edges_from(g.edges)
    return h


def chain3():
    return PolcmGraph(0, 3, frozenset({(0, 1), (1, 2)}))


def test_parents_examples():
    g = fixtures.load("fig2b")
    assert parents(g, g.index("X2")) == g.nodes("L1")
    assert parents(PolcmGraph(0, 4, frozenset()), 2) == frozenset()
    assert parents(chain3(), 2) == {1}


def test_parents_rejects_bad_node():
    with pytest.raises(GraphError):
        parents(chain3(), 7)


def test_pure_children_examples():
    g = fixtures.load("fig3")
    assert pure_children(g, g.nodes("L1", "X6")) == g.nodes("X9", "X10")
    g = fixtures.load("fig2b")
    assert pure_children(g, g.nodes("L1")) == g.nodes("X2", "X3", "X4")
    assert pure_children(chain3(), {1}) == {2}


def test_loose_pure_children_spans_cover():
    g = fixtures.load("operators")
    cover = g.nodes("L2", "L3")
    assert g.index("X5") not in pure_children(g, cover)
    assert g.index("X5") in loose_pure_children(g, cover)
    # one child alone cannot span a two-node cover
    g2 = PolcmGraph(2, 1, frozenset({(0, 2)}))
    assert loose_pure_children(g2, {0, 1}) == frozenset()


def test_neighbours():
    g = fixtures.load("fig3")
    assert neighbours(g, g.nodes("L1", "X6")) == g.nodes("X4", "X5", "X9", "X10", "X11", "X12")


def test_cycle_and_range_errors():
    with pytest.raises(GraphError):
        PolcmGraph(0, 2, frozenset({(0, 1), (1, 0)}))
    with pytest.raises(GraphError):
        PolcmGraph(0, 2, frozenset({(0, 5)}))
    with pytest.raises(GraphError):
        PolcmGraph(0, 2, frozenset({(1, 1)}))


def test_topological_order_respects_edges():
    for name in fixtures.names():
        g = fixtures.load(name)
        pos = {v: i for i, v in enumerate(g.topological_order)}
        assert all(pos[a] < pos[b] for a, b in g.edges)


def test_load_graph_with_coefficients(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"num_latent": 1, "num_observed": 1, "edges": [[0, 1]], "coefficients": [[0, 1, 0.5]]}))
    g, coefs = load_graph(p)
    assert coefs == {(0, 1): 0.5}
    p.write_text(json.dumps({"num_latent": 1, "num_observed": 1, "edges": [], "coefficients": [[0, 1, 0.5]]}))
    with pytest.raises(GraphError):
        load_graph(p)
    p.write_text("{not json")
    with pytest.raises(GraphError):
        load_graph(p)


def test_drop_nodes_reindexes():
    g = fixtures.load("operators")
    h = g.drop_nodes(g.nodes("L4"))
    assert h.num_latent == 3 and "L4" not in h.names
    assert h.num_nodes == g.num_nodes - 1


@settings(max_examples=150, deadline=None)
@given(dags(max_nodes=8))
def test_d_separation_matches_networkx(g):
    h = to_nx(g)
    rng = np.random.default_rng(len(g.edges) * 31 + g.num_nodes)
    for _ in range(10):
        perm = [int(v) for v in rng.permutation(g.num_nodes)]
        split = int(rng.integers(1, g.num_nodes))
        a = set(perm[:split][: int(rng.integers(1, 3))])
        b = {perm[-1]}
        z = {v for v in perm[split:-1] if rng.random() < 0.5}
        assert d_separated(g, a, b, z) == nx.is_d_separator(h, a, b, z)


def test_d_separation_rejects_overlap():
    with pytest.raises(GraphError):
        d_separated(chain3(), {0}, {0}, set())


def brute_force_treks(g, i, j):
    h = to_nx(g)
    out = set()
    for top in range(g.num_nodes):
        ups = [(top,)] if top == i else [tuple(p) for p in nx.all_simple_paths(h, top, i)]
        downs = [(top,)] if top == j else [tuple(p) for p in nx.all_simple_paths(h, top, j)]
        for u, d in itertools.product(ups, downs):
            if set(u) & set(d) == {top}:
                out.add((u, d))
    return out


@settings(max_examples=100, deadline=None)
@given(dags(max_nodes=7))
def test_simple_treks_match_path_enumeration(g):
    for i in range(g.num_nodes):
        for j in range(g.num_nodes):
            got = {(t.path_up, t.path_down) for t in enumerate_simple_treks(g, i, j)}
            assert got == brute_force_treks(g, i, j)
            assert all(t.is_simple() for t in enumerate_simple_treks(g, i, j))


def test_trek_example_has_four_treks():
    g = fixtures.load("trek_example")
    treks = enumerate_simple_treks(g, g.index("X4"), g.index("X5"))
    assert len(treks) == 4
    assert {t.top for t in treks} == set(g.nodes("L1", "X2", "X3"))

import itertools

import numpy as np
import pytest
from hypothesis import given, settings

from polcm import fixtures
from polcm.covariance import covariance_full, support_mask
from polcm.graph import PolcmGraph, d_separated
from polcm.identifiability import (
    NumericalDegeneracyError,
    Verdict,
    algebraic_identify,
    apply_minimal_graph_operator,
    apply_skeleton_operator,
    check_condition_basic,
    check_condition_colliders,
    check_identifiability,
    check_theorem3,
    common_colliders,
    detect_orthogonal_indeterminacy,
    find_atomic_covers,
    minimal_separators,
    separable_within,
    verify_certificate,
)

from helpers import dags, population


def covers_of(g, latent_only=True):
    return {c.cover for c in find_atomic_covers(g) if c.latent_count or not latent_only}


def test_fig3_covers_and_conditions():
    g = fixtures.load("fig3")
    assert covers_of(g) == {g.nodes("L1", "X6"), g.nodes("L2"), g.nodes("L3")}
    covers = find_atomic_covers(g)
    assert check_condition_basic(g, covers).passed is True
    res = check_condition_colliders(g, covers)
    assert res.passed is True
    pairs = {
        (tuple(e["V"]), frozenset([tuple(e["V1"]), tuple(e["V2"])]), tuple(e["T"]), e["holds"])
        for e in res.details["checked"]
    }
    assert (("X12",), frozenset([("L1", "X6"), ("L2",)]), ("X4", "X5"), True) in pairs


def test_fig3_cover_witnesses():
    g = fixtures.load("fig3")
    cert = next(c for c in find_atomic_covers(g) if c.cover == g.nodes("L1", "X6"))
    assert frozenset().union(*cert.witness_children) == g.nodes("X9", "X10")
    assert len(cert.witness_neighbours) >= 2


def test_singletons_of_observed_are_covers():
    g = fixtures.load("fig2b")
    assert covers_of(g, latent_only=False) == {frozenset([v]) for v in g.observed}


def test_certificates_reverify_on_fixtures():
    for name in fixtures.names():
        g = fixtures.load(name)
        covers = find_atomic_covers(g)
        sets = [c.cover for c in covers]
        assert all(verify_certificate(g, c, sets) for c in covers), name


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=9))
def test_certificates_reverify_on_random_graphs(g):
    covers = find_atomic_covers(g)
    sets = [c.cover for c in covers]
    for c in covers:
        assert verify_certificate(g, c, sets)


def test_condition_basic_flags_uncovered_latent():
    g = fixtures.load("trek_example")
    res = check_condition_basic(g, find_atomic_covers(g))
    assert res.passed is False
    assert res.details["uncovered_latents"] == ["L1"]


def test_condition_colliders_fails_for_independent_covers_sharing_a_child():
    # two independent root covers with a common child: the empty set separates them
    names_l = ["L1", "L2", "L3"]
    names_x = [f"X{i}" for i in range(4, 13)]
    edges = [(a, x) for a in ("L1", "L2") for x in ("X4", "X5", "X6", "X7", "X8", "X9")]
    edges += [("L3", x) for x in ("X4", "X10", "X11", "X12")]
    g = PolcmGraph.from_names(names_l, names_x, edges)
    res = check_condition_colliders(g, find_atomic_covers(g))
    assert res.passed is False
    failing = {(tuple(e["V"]), frozenset([tuple(e["V1"]), tuple(e["V2"])]), tuple(e["T"])) for e in res.details["failures"]}
    assert (("X4",), frozenset([("L3",), ("L1", "L2")]), ()) in failing


def test_common_colliders():
    g = fixtures.load("fig3")
    assert common_colliders(g, g.nodes("L1", "X6"), g.nodes("L2")) == g.nodes("X12")


def test_minimal_separators_fig3():
    g = fixtures.load("fig3")
    seps = minimal_separators(g, g.nodes("L1", "X6"), g.nodes("L2"), 5)
    assert seps == [g.nodes("X4", "X5")]


@settings(max_examples=80, deadline=None)
@given(dags(max_nodes=8))
def test_separable_within_matches_subset_search(g):
    rng = np.random.default_rng(g.num_nodes * 7 + len(g.edges))
    for _ in range(4):
        perm = [int(v) for v in rng.permutation(g.num_nodes)]
        a, b = {perm[0]}, {perm[1]} if g.num_nodes > 1 else set()
        if not b:
            return
        allowed = [v for v in perm[2:] if rng.random() < 0.7]
        brute = any(
            d_separated(g, a, b, set(t))
            for k in range(len(allowed) + 1)
            for t in itertools.combinations(allowed, k)
        )
        z = separable_within(g, frozenset(a), frozenset(b), allowed)
        assert (z is not None) == brute
        if z is not None:
            assert d_separated(g, a, b, z) and z <= set(allowed)


def test_theorem3_on_paper_graphs():
    for name in ("fig3", "fig2b", "ident_mixed"):
        g = fixtures.load(name)
        t_i, t_ii = check_theorem3(g, find_atomic_covers(g))
        assert t_i.passed is True and t_ii.passed is True, name
    for name in ("fig2a", "orth_example"):
        g = fixtures.load(name)
        t_i, _ = check_theorem3(g, find_atomic_covers(g))
        assert t_i.passed is False
        assert t_i.details["offending_covers"] == [["L1", "L2"]]


def test_theorem3_ii_witness_on_fig3():
    g = fixtures.load("fig3")
    _, t_ii = check_theorem3(g, find_atomic_covers(g))
    assert {"cover": ["L1", "X6"], "separator": ["X4", "X5"]} in t_ii.details["witnesses"]


def test_theorem3_ii_fails_without_observed_separator():
    # X5 and L1 share the latent parent L2, which no observed set can block
    g = PolcmGraph.from_names(
        ["L1", "L2"],
        ["X3", "X4", "X5", "X6", "X7", "X8", "X9", "X10"],
        [("L2", "L1"), ("L2", "X5"), ("L2", "X3"), ("L2", "X4"), ("L2", "X10"),
         ("X4", "X5"), ("L1", "X6"), ("L1", "X7"), ("X5", "X6"), ("X5", "X7"), ("X6", "X8"), ("X7", "X9")],
    )
    covers = find_atomic_covers(g)
    assert g.nodes("L1", "X5") in {c.cover for c in covers}
    _, t_ii = check_theorem3(g, covers)
    assert t_ii.passed is False
    assert ["L1", "X5"] in t_ii.details["offending_covers"]


def test_orthogonal_indeterminacy_examples():
    for name in ("orth_example", "fig2a"):
        g = fixtures.load(name)
        assert detect_orthogonal_indeterminacy(g) == [g.nodes("L1", "L2")]
    assert detect_orthogonal_indeterminacy(fixtures.load("fig2b")) == []
    g = fixtures.load("ot_triple")
    assert detect_orthogonal_indeterminacy(g) == [g.nodes("L1", "L2", "L3")]


def test_orthogonal_groups_fail_theorem3_when_they_form_covers():
    for name in fixtures.names():
        g = fixtures.load(name)
        covers = find_atomic_covers(g)
        groups = detect_orthogonal_indeterminacy(g)
        t_i, _ = check_theorem3(g, covers)
        if any(grp <= c.cover for grp in groups for c in covers):
            assert t_i.passed is False, name


def test_verdicts():
    expected = {
        "fig3": Verdict.FULLY_IDENTIFIABLE,
        "ident_simple": Verdict.FULLY_IDENTIFIABLE,
        "ident_mixed": Verdict.FULLY_IDENTIFIABLE,
        "gs_chain": Verdict.FULLY_IDENTIFIABLE,
        "gs_mixed": Verdict.FULLY_IDENTIFIABLE,
        "orth_example": Verdict.UP_TO_ORTHOGONAL,
        "fig2a": Verdict.UP_TO_ORTHOGONAL,
        "trek_example": Verdict.NOT_STRUCTURE_IDENTIFIABLE,
    }
    for name, verdict in expected.items():
        assert check_identifiability(fixtures.load(name)).verdict is verdict, name
    for name in fixtures.OT_FIXTURES:
        assert check_identifiability(fixtures.load(name)).verdict is Verdict.UP_TO_ORTHOGONAL, name


def test_separator_cap_gives_unknown():
    rep = check_identifiability(fixtures.load("fig3"), max_sep_size=0)
    assert rep.cond_colliders.passed is None
    assert rep.verdict is Verdict.UNKNOWN


def test_report_serializes():
    g = fixtures.load("fig3")
    d = check_identifiability(g).to_dict(g)
    assert d["verdict"] == "FullyIdentifiable"
    assert ["L1", "X6"] in [c["cover"] for c in d["atomic_covers"]]


def test_skeleton_operator_adds_missing_edge():
    g = fixtures.load("operators")
    h = apply_skeleton_operator(g)
    assert h.edges - g.edges == {(g.index("L2"), g.index("X5"))}
    assert apply_skeleton_operator(h) == h


def test_minimal_graph_operator_removes_l4():
    g = fixtures.load("operators")
    h = apply_minimal_graph_operator(g)
    assert "L4" not in h.names
    assert (h.index("L1"), h.index("X6")) in h.edges and (h.index("L1"), h.index("X7")) in h.edges
    assert apply_minimal_graph_operator(h) == h


@settings(max_examples=40, deadline=None)
@given(dags(max_nodes=8))
def test_operators_idempotent(g):
    s = apply_skeleton_operator(g)
    assert apply_skeleton_operator(s) == s
    m = apply_minimal_graph_operator(g)
    assert apply_minimal_graph_operator(m) == m


def unit_corr(g, coefs):
    from polcm.covariance import unit_variance_covariance, weights_from_edges

    s, om = unit_variance_covariance(g, weights_from_edges(g, coefs))
    assert np.all(om > 0)
    return s[g.num_latent :, g.num_latent :]


def test_algebraic_fig2b_closed_form():
    g = fixtures.load("fig2b")
    sigma = np.array([[1.0, 0.30, 0.35], [0.30, 1.0, 0.42], [0.35, 0.42, 1.0]])
    res = algebraic_identify(g, sigma)
    f = res.as_matrix(g.num_nodes)
    np.testing.assert_allclose(np.abs(f[0, 1:]), [0.5, 0.6, 0.7], atol=1e-12)
    assert not res.unresolved


def test_algebraic_borrowed_variable_formula():
    g, fs, _, sigma = population("ident_simple")
    res = algebraic_identify(g, sigma)
    l4, x13, x14, x8 = (g.index(n) for n in ("L4", "X13", "X14", "X8"))
    m = g.num_latent
    s = lambda a, b: sigma[a - m, b - m]
    expected = np.sqrt(s(x13, x14) * s(x13, x8) / s(x14, x8))
    assert abs(abs(res.coefficients[(l4, x13)]) - expected) < 1e-12
    assert abs(expected - abs(fs[l4, x13])) < 1e-8


def test_algebraic_chain_is_regression():
    g = PolcmGraph(0, 3, frozenset({(0, 1), (1, 2)}))
    sigma = unit_corr(g, {(0, 1): 0.4, (1, 2): -0.7})
    res = algebraic_identify(g, sigma)
    assert res.coefficients[(0, 1)] == pytest.approx(sigma[0, 1])
    assert res.coefficients[(1, 2)] == pytest.approx(sigma[1, 2])


@pytest.mark.parametrize("name", ["fig2b", "ident_simple", "gs_chain"])
def test_algebraic_matches_truth(name):
    for seed in range(3):
        g, fs, _, sigma = population(name, seed)
        res = algebraic_identify(g, sigma)
        assert not res.unresolved
        np.testing.assert_allclose(np.abs(res.as_matrix(g.num_nodes)), np.abs(fs), atol=1e-8)


def test_algebraic_leaves_mixed_covers_unresolved():
    g, _, _, sigma = population("ident_mixed")
    res = algebraic_identify(g, sigma)
    l1 = g.index("L1")
    assert any(l1 in e for e in res.unresolved)
    # edges among observed nodes with observed parents are still solved
    assert (g.index("X3"), g.index("X5")) not in res.unresolved


def test_algebraic_degenerate_triple_raises():
    g = fixtures.load("fig2b")
    sigma = np.array([[1.0, 0.30, 0.35], [0.30, 1.0, 0.0], [0.35, 0.0, 1.0]])
    with pytest.raises(NumericalDegeneracyError, match="X2"):
        algebraic_identify(g, sigma)

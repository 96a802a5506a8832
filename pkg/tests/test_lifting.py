import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superpatch.curvature import (build_segmentation_instance, mask_to_label, model_table,
                                  segmentation_factor_graph, two_by_two_costs)
from superpatch.energy import INF, Factor, FactorGraph, brute_force_min, evaluate
from superpatch.errors import CoverError, ModelError
from superpatch.lifting import (PatchCover, SuperGraph, SuperNode, arc_consistency,
                                build_super_graph, decode, enumerate_patch_labels, make_edge,
                                select_consistency_edges, super_energy, verify_edge_sufficiency)

from conftest import random_instance


def curvature_lift(rng, lam=0.5, h=4, w=4):
    data, lam = random_instance(rng, h, w, lam)
    graph = segmentation_factor_graph(data, lam, two_by_two_costs())
    return graph, build_super_graph(graph, PatchCover.sliding(w, h, 2))


def test_binary_2x2_patch_has_16_labels():
    assert enumerate_patch_labels((0, 1, 2, 3), [2] * 4).tolist() == list(range(16))


def test_single_ternary_variable():
    assert enumerate_patch_labels((0,), [3]).tolist() == [0, 1, 2]


def test_quarter_pi_filter_gives_122_labels():
    allowed = {mask_to_label(int(m), 3) for m in model_table("3x3").allowed}
    pred = lambda vals: int("".join(map(str, vals)), 2) in allowed
    labels = enumerate_patch_labels(tuple(range(9)), [2] * 9, pred)
    assert labels.size == 122
    assert (np.diff(labels) > 0).all()


def test_empty_filter_is_a_model_error():
    with pytest.raises(ModelError):
        enumerate_patch_labels((0, 1), [2, 2], lambda vals: False)


def test_whole_graph_patch_equals_enumeration():
    rng = np.random.default_rng(0)
    g = FactorGraph.binary(4, [Factor((0, 2), rng.normal(size=4)), Factor((1, 2, 3), rng.normal(size=8)),
                               Factor((3,), rng.normal(size=2))])
    sg = build_super_graph(g, PatchCover([(0, 1, 2, 3)]))
    assert sg.edges == []
    expect = [evaluate(g, x) for x in itertools.product([0, 1], repeat=4)]
    np.testing.assert_allclose(sg.nodes[0].unary, expect, atol=1e-12)


def test_centre_pixel_data_term_is_split_four_ways():
    data = np.zeros((3, 3, 2))
    data[1, 1, 1] = 1.0
    graph = FactorGraph.binary(9, [Factor((r * 3 + c,), data[r, c]) for r in range(3) for c in range(3)])
    sg = build_super_graph(graph, PatchCover.sliding(3, 3, 2))
    assert sg.membership[4] == 4
    for node in sg.nodes:
        pos = node.scope.index(4)
        on = node.values[:, pos] == 1
        np.testing.assert_allclose(node.unary[on], 0.25)
        np.testing.assert_allclose(node.unary[~on], 0.0)


def test_unary_weights_sum_to_one_per_pixel():
    for h, w, s in ((4, 4, 2), (5, 7, 3), (6, 5, 2)):
        graph = FactorGraph.binary(h * w, [Factor((i,), [0.0, 1.0]) for i in range(h * w)])
        sg = build_super_graph(graph, PatchCover.sliding(w, h, s))
        totals = np.zeros(h * w)
        for node in sg.nodes:
            for pos, v in enumerate(node.scope):
                only_v = np.zeros(len(node.scope), dtype=int)
                only_v[pos] = 1
                totals[v] += node.unary[node.index_of(only_v)]
        np.testing.assert_allclose(totals, 1.0, atol=1e-12)


def test_lifted_energy_matches_evaluate():
    rng = np.random.default_rng(1)
    graph, sg = curvature_lift(rng)
    for _ in range(50):
        x = rng.integers(0, 2, size=16)
        assert super_energy(sg, sg.lift(x)) == pytest.approx(evaluate(graph, x), abs=1e-9)


def test_lifted_energy_exhaustive_3x3():
    rng = np.random.default_rng(2)
    graph, sg = curvature_lift(rng, h=3, w=3)
    for bits in itertools.product([0, 1], repeat=9):
        x = np.array(bits)
        assert super_energy(sg, sg.lift(x)) == pytest.approx(evaluate(graph, x), abs=1e-9)


def test_uncovered_factor_raises():
    g = FactorGraph.binary(4, [Factor((0, 3), np.zeros(4))])
    with pytest.raises(CoverError):
        build_super_graph(g, PatchCover([(0, 1), (2, 3)]))


def test_factor_goes_to_first_covering_patch():
    g = FactorGraph.binary(3, [Factor((1,), [0, 0]), Factor((0, 1), [0, 0, 0, 5.0])])
    sg = build_super_graph(g, PatchCover([(1, 2), (0, 1, 2), (0, 1)]))
    assert sg.nodes[0].unary.max() == 0
    assert sg.nodes[1].unary.max() == 5.0
    assert sg.nodes[2].unary.max() == 0


# --- consistency edges -------------------------------------------------------

def test_2x2_cover_on_4x4_gives_4_connected_lattice():
    cover = PatchCover.sliding(4, 4, 2)
    edges = select_consistency_edges(cover)
    assert len(edges) == 12
    for a, b in edges:
        ra, ca = divmod(a, 3)
        rb, cb = divmod(b, 3)
        assert abs(ra - rb) + abs(ca - cb) == 1
    assert verify_edge_sufficiency(cover, edges)


def test_general_cover_greedy_matches_lattice_size():
    # same patches without the grid hint take the greedy path
    cover = PatchCover(PatchCover.sliding(4, 4, 2).patches)
    edges = select_consistency_edges(cover)
    assert verify_edge_sufficiency(cover, edges)
    assert len(edges) <= 12 + 8


def test_trivial_edge_sets():
    assert select_consistency_edges(PatchCover([(0, 1, 2)])) == []
    assert select_consistency_edges(PatchCover([(0, 1), (1, 2)])) == [(0, 1)]
    assert not verify_edge_sufficiency(PatchCover([(0, 1), (1, 2)]), [])


TOY = PatchCover([(0, 1, 2), (1, 2, 3), (2, 3, 4)])


def zero_cost_inconsistent(cover, edges):
    """Exhaustive search for a super labeling with zero pairwise cost that decodes inconsistently."""
    g = FactorGraph.binary(1 + max(max(p) for p in cover.patches))
    sg = build_super_graph(g, cover, edges=edges)
    for X in itertools.product(*[range(n.num_labels) for n in sg.nodes]):
        if super_energy(sg, X) < INF and not decode(sg, X)[1]:
            return X
    return None


def test_removing_a_needed_edge_breaks_consistency():
    edges = select_consistency_edges(TOY)
    assert verify_edge_sufficiency(TOY, edges)
    assert zero_cost_inconsistent(TOY, edges) is None
    for k in range(len(edges)):
        fewer = edges[:k] + edges[k + 1:]
        assert not verify_edge_sufficiency(TOY, fewer)
        assert zero_cost_inconsistent(TOY, fewer) is not None


@st.composite
def small_covers(draw):
    n = draw(st.integers(2, 6))
    patches = draw(st.lists(st.sets(st.integers(0, n - 1), min_size=1, max_size=4),
                            min_size=1, max_size=3))
    return PatchCover([tuple(p) for p in patches])


@given(small_covers())
def test_sufficient_edges_force_consistency(cover):
    edges = select_consistency_edges(cover)
    assert verify_edge_sufficiency(cover, edges)
    assert zero_cost_inconsistent(cover, edges) is None


# --- decoding ----------------------------------------------------------------

def test_decode_roundtrip():
    rng = np.random.default_rng(3)
    _, sg = curvature_lift(rng)
    x = rng.integers(0, 2, size=16)
    y, ok = decode(sg, sg.lift(x))
    assert ok and y.tolist() == x.tolist()


def test_disagreeing_patches_are_inconsistent():
    g = FactorGraph.binary(3)
    sg = build_super_graph(g, PatchCover([(0, 1), (1, 2)]))
    X = [sg.nodes[0].index_of([0, 1]), sg.nodes[1].index_of([0, 0])]
    x, ok = decode(sg, X)
    assert not ok
    assert x.tolist() == [0, 1, 0]
    assert super_energy(sg, X) == INF


def test_consistent_super_energy_equals_unary_sum_and_evaluate():
    rng = np.random.default_rng(4)
    graph, sg = curvature_lift(rng)
    for _ in range(100):
        X = sg.lift(rng.integers(0, 2, size=16))
        x, ok = decode(sg, X)
        assert ok
        unary = sum(n.unary[X[k]] for k, n in enumerate(sg.nodes))
        assert super_energy(sg, X) == pytest.approx(unary)
        assert super_energy(sg, X) == pytest.approx(evaluate(graph, x), abs=1e-9)


# --- groups and arc consistency -------------------------------------------------

@given(st.integers(0, 2**32 - 1))
def test_groups_match_naive_comparison(seed):
    rng = np.random.default_rng(seed)
    scope_a = tuple(sorted(rng.choice(6, size=3, replace=False).tolist()))
    rest = [v for v in range(6) if v not in scope_a]
    scope_b = tuple(sorted([int(rng.choice(scope_a))] + rng.choice(rest, size=2, replace=False).tolist()))
    counts = [2, 3, 2, 2, 3, 2]
    nodes = []
    for scope in (scope_a, scope_b):
        labels = enumerate_patch_labels(scope, counts)
        labels = np.sort(rng.choice(labels, size=max(1, labels.size // 2), replace=False))
        nodes.append(SuperNode(scope, tuple(counts[v] for v in scope), labels, np.zeros(labels.size)))
    e = make_edge(nodes, 0, 1)
    pa = [scope_a.index(v) for v in e.overlap]
    pb = [scope_b.index(v) for v in e.overlap]
    for i, va in enumerate(nodes[0].values):
        for j, vb in enumerate(nodes[1].values):
            assert (e.group_a[i] == e.group_b[j]) == np.array_equal(va[pa], vb[pb])


def test_arc_consistency_prunes_unsupported_labels():
    g = FactorGraph.binary(3)
    cover = PatchCover([(0, 1), (1, 2)])
    nodes = [SuperNode((0, 1), (2, 2), np.array([0, 1, 2, 3]), np.zeros(4)),
             SuperNode((1, 2), (2, 2), np.array([0, 1]), np.zeros(2))]  # variable 1 fixed to 0
    sg = SuperGraph(3, g.label_count, nodes, [make_edge(nodes, 0, 1)], cover)
    keep = arc_consistency(sg)
    assert keep[0].tolist() == [True, False, True, False]
    assert keep[1].all()


def test_arc_consistency_detects_empty_node():
    nodes = [SuperNode((0, 1), (2, 2), np.array([1, 3]), np.zeros(2)),   # variable 1 = 1
             SuperNode((1, 2), (2, 2), np.array([0, 1]), np.zeros(2))]   # variable 1 = 0
    sg = SuperGraph(3, (2, 2, 2), nodes, [make_edge(nodes, 0, 1)], PatchCover([(0, 1), (1, 2)]))
    with pytest.raises(ModelError):
        arc_consistency(sg)


def test_arc_consistency_keeps_the_optimum():
    rng = np.random.default_rng(5)
    data, lam = random_instance(rng, 4, 4, 1.0)
    table = model_table("3x3")
    graph = segmentation_factor_graph(data, lam, table)
    x, e = brute_force_min(graph)
    sg = build_segmentation_instance(data, lam, table).super_graph
    keep = arc_consistency(sg)
    X = sg.lift(x)
    assert all(keep[k][X[k]] for k in range(len(sg.nodes)))
    assert super_energy(sg, X) == pytest.approx(e, abs=1e-9)

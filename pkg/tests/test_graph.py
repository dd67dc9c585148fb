from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcl_rec.data import InteractionDataset
from graphcl_rec.graph import build_graph, dump_edges, graph_from_edges, neighbors, perturb_edges, view_seed


def three_edge():
    return build_graph(InteractionDataset(2, 2, np.array([[0, 0], [0, 1], [1, 0]])))


def random_graph(seed, nu=12, ni=15, density=0.3):
    rng = np.random.default_rng(seed)
    u, i = np.nonzero(rng.random((nu, ni)) < density)
    return graph_from_edges(nu, ni, u, i)


def exact_coeffs(du, di, users, items):
    """Correctly rounded 1/sqrt(du*di) via 40-digit decimal arithmetic."""
    getcontext().prec = 40
    return np.array([float(1 / (Decimal(int(du[u])) * Decimal(int(di[i]))).sqrt())
                     for u, i in zip(users, items)])


def coeff(g, u, i):
    idx, c = neighbors(g, u, "user")
    return c[list(idx).index(i)]


def test_three_edge_coefficients():
    g = three_edge()
    assert coeff(g, 0, 0) == 0.5
    assert coeff(g, 1, 0) == 0.7071067811865475
    assert coeff(g, 0, 1) == 0.7071067811865475


def test_single_edge_coefficient():
    g = graph_from_edges(1, 1, [0], [0])
    assert coeff(g, 0, 0) == 1.0


def test_empty_train_rejected():
    empty = InteractionDataset(1, 1, np.array([[0, 0]])).with_pairs(np.empty((0, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        build_graph(empty)


def test_neighbors_sorted_and_readonly():
    g = three_edge()
    idx, c = neighbors(g, 0)
    assert list(idx) == [0, 1]
    assert c[0] == 0.5
    with pytest.raises(ValueError):
        c[0] = 1.0


def test_neighbors_out_of_range():
    with pytest.raises(IndexError):
        neighbors(three_edge(), 2)
    with pytest.raises(IndexError):
        neighbors(three_edge(), -1, "item")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_transpose_consistency_and_symmetry(seed):
    g = random_graph(seed)
    fwd = {(u, int(i)): c for u in range(g.num_users) for i, c in zip(*neighbors(g, u, "user"))}
    bwd = {(int(u), i): c for i in range(g.num_items) for u, c in zip(*neighbors(g, i, "item"))}
    assert fwd == bwd
    assert np.array_equal(g.user_items.to_dense(), g.item_users.to_dense().T)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_coefficients_within_one_ulp(seed):
    g = random_graph(seed)
    du, di = g.user_degrees(), g.item_degrees()
    users, items, c = g.edges()
    exact = exact_coeffs(du, di, users, items)
    assert np.all(np.abs(c - exact) <= np.spacing(exact))


def test_training_graph_has_no_zero_degree_users():
    g = random_graph(4, density=0.5)
    assert np.all(g.user_degrees()[np.unique(g.edges()[0])] > 0)


def test_p_zero_identity_view():
    g = random_graph(1)
    v = perturb_edges(g, 0.0, 5).graph
    for a, b in zip(g.edges(), v.edges()):
        assert np.array_equal(a, b)


def test_p_one_empty_view():
    v = perturb_edges(random_graph(1), 1.0, 5)
    assert v.graph.num_edges == 0
    assert len(neighbors(v.graph, 0)[0]) == 0


def test_kept_fraction_concentrates():
    rng = np.random.default_rng(0)
    g = graph_from_edges(200, 200, rng.integers(0, 200, 20000), rng.integers(0, 200, 20000))
    assert g.num_edges >= 10000
    frac = perturb_edges(g, 0.3, 123).graph.num_edges / g.num_edges
    assert 0.67 <= frac <= 0.73


def test_bad_probability():
    with pytest.raises(ValueError):
        perturb_edges(three_edge(), 1.2, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_view_is_subset_and_renormalized(seed, p):
    g = random_graph(seed % 50)
    v = perturb_edges(g, p, seed).graph
    parent = set(zip(*g.edges()[:2]))
    users, items, c = v.edges()
    assert set(zip(users, items)) <= parent
    du, di = v.user_degrees(), v.item_degrees()
    exact = exact_coeffs(du, di, users, items)
    assert np.all(np.abs(c - exact) <= np.spacing(exact))
    fwd = {(u, i): x for u, i, x in zip(users, items, c)}
    bwd = {(int(u), i): x for i in range(v.num_items) for u, x in zip(*neighbors(v, i, "item"))}
    assert fwd == bwd


def test_view_without_renormalization_keeps_parent_coefficients():
    g = random_graph(2)
    v = perturb_edges(g, 0.5, 9, renormalize=False).graph
    parent = {(u, i): c for u, i, c in zip(*g.edges())}
    assert all(parent[(u, i)] == c for u, i, c in zip(*v.edges()))


def test_perturbation_deterministic_per_seed():
    g = random_graph(3)
    a, b = perturb_edges(g, 0.4, 77).graph, perturb_edges(g, 0.4, 77).graph
    assert np.array_equal(a.edges()[2], b.edges()[2])
    c = perturb_edges(g, 0.4, 78).graph
    assert not (a.num_edges == c.num_edges and np.array_equal(a.edges()[0], c.edges()[0])
                and np.array_equal(a.edges()[1], c.edges()[1]))


def test_expected_edges_monotone_in_p():
    g = random_graph(5, 20, 20, 0.5)
    counts = [np.mean([perturb_edges(g, p, s).graph.num_edges for s in range(40)]) for p in (0.1, 0.3, 0.6, 0.9)]
    assert counts == sorted(counts, reverse=True)


def test_view_seeds_differ_by_view_and_batch():
    seeds = {view_seed(0, e, b, v) for e in range(3) for b in range(3) for v in (1, 2)}
    assert len(seeds) == 18
    assert view_seed(4, 1, 2, 1) == view_seed(4, 1, 2, 1)


def test_dump_edges(tmp_path):
    dump_edges(three_edge(), tmp_path / "e.tsv")
    rows = [line.split("\t") for line in (tmp_path / "e.tsv").read_text().splitlines()]
    assert rows[0] == ["0", "0", "0.5"]
    assert float(rows[2][2]) == 0.7071067811865475

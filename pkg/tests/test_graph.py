import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bm3.graph import build_adjacency, propagate


def dense_norm_adj(edges, nu, ni):
    n = nu + ni
    a = np.zeros((n, n))
    for u, i in edges:
        a[u, nu + i] = a[nu + i, u] = 1.0
    deg = a.sum(1)
    inv = np.array([1 / np.sqrt(x) if x > 0 else 0.0 for x in deg])
    return inv[:, None] * a * inv[None, :]


def random_edges(rng, nu, ni, m):
    return np.array(sorted({(int(rng.integers(nu)), int(rng.integers(ni))) for _ in range(m)})).reshape(-1, 2)


def test_single_edge():
    adj = build_adjacency([[0, 0]], 1, 1)
    assert adj.toarray().tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_star_values():
    adj = build_adjacency([[0, 0], [0, 1]], 1, 2)
    assert np.allclose(adj.data, 1 / np.sqrt(2))
    assert adj.nnz == 4


def test_random_20_edges_vs_dense():
    rng = np.random.default_rng(0)
    edges = random_edges(rng, 8, 9, 20)
    assert np.allclose(build_adjacency(edges, 8, 9).toarray(), dense_norm_adj(edges, 8, 9), rtol=0, atol=1e-12)


def test_invariants_and_isolated_rows():
    edges = np.array([[0, 0], [0, 1], [2, 1]])
    adj = build_adjacency(edges, 3, 3)
    dense = adj.toarray()
    assert np.array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0)
    assert not dense[1].any() and not dense[3 + 2].any()
    assert dense[:3, :3].sum() == 0 and dense[3:, 3:].sum() == 0


def test_duplicate_edges_are_binary():
    adj = build_adjacency([[0, 0], [0, 0]], 1, 1)
    assert adj.toarray().tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_out_of_range():
    with pytest.raises(IndexError):
        build_adjacency([[0, 3]], 1, 3)


def test_propagate_examples():
    adj = build_adjacency([[0, 0]], 1, 1)
    assert propagate(adj, np.array([[1.0, 2.0], [3.0, 4.0]])).tolist() == [[3.0, 4.0], [1.0, 2.0]]
    assert not propagate(adj, np.zeros((2, 3))).any()
    with pytest.raises(ValueError):
        propagate(adj, np.zeros((3, 2)))


def test_propagate_random_15_nodes_vs_dense():
    rng = np.random.default_rng(1)
    edges = random_edges(rng, 7, 8, 25)
    adj = build_adjacency(edges, 7, 8)
    h = rng.normal(size=(15, 4))
    expected = dense_norm_adj(edges, 7, 8) @ h
    assert np.allclose(propagate(adj, h), expected, rtol=1e-6, atol=1e-12)


graphs = st.tuples(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31 - 1))


@settings(max_examples=50, deadline=None)
@given(graphs)
def test_linearity_symmetry_spectrum(g):
    nu, ni, seed = g
    rng = np.random.default_rng(seed)
    edges = random_edges(rng, nu, ni, int(rng.integers(1, nu * ni + 1)))
    adj = build_adjacency(edges, nu, ni)
    n = nu + ni
    h1, h2 = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    a, b = rng.normal(), rng.normal()
    lhs = propagate(adj, a * h1 + b * h2)
    rhs = a * propagate(adj, h1) + b * propagate(adj, h2)
    assert np.allclose(lhs, rhs, rtol=1e-6, atol=1e-9)
    x, y = rng.normal(size=n), rng.normal(size=n)
    assert abs(x @ (adj @ y) - y @ (adj @ x)) <= 1e-6 * max(1.0, abs(x @ (adj @ y)))
    # power iteration on adj^2 (nonnegative, PSD) bounds |lambda_max|^2
    v = rng.random(n) + 0.1
    for _ in range(300):
        w = adj @ (adj @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        v = w / nrm
    lam = np.sqrt(np.linalg.norm(adj @ (adj @ v)) / np.linalg.norm(v)) if nrm else 0.0
    assert lam <= 1 + 1e-6
    iso = np.asarray(adj.sum(axis=1)).ravel() == 0
    assert not propagate(adj, h1)[iso].any()

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from controlg.errors import ContractViolation
from controlg.graph_spectral import (
    Graph,
    eig_sym,
    erdos_renyi_graph,
    grid_graph,
    jacobi_eigh,
    lowpass_filter_apply,
    normalized_laplacian,
    normalized_laplacian_quadform,
    rayleigh_quotient,
    read_graph,
    ring_graph,
    write_graph,
)
from controlg.verification import random_graph


def k2():
    return Graph.from_edges(2, [(0, 1, 1.0)])


def dense_laplacian_oracle(g):
    # built straight from the definition, independent of the library helper
    A = np.zeros((g.n, g.n))
    for i, j, w in g.edges():
        A[i, j] = A[j, i] = w
    d = A.sum(axis=1)
    return np.eye(g.n) - A / np.sqrt(np.outer(d, d))


# --- construction -----------------------------------------------------------------


def test_edges_sorted_and_deduplicated():
    g = Graph.from_edges(4, [(2, 3, 1.0), (1, 0, 2.0), (1, 2, 0.5)])
    assert g.edges() == [(0, 1, 2.0), (1, 2, 0.5), (2, 3, 1.0)]
    np.testing.assert_allclose(g.degrees, [2.0, 2.5, 1.5, 1.0])


@pytest.mark.parametrize(
    "edges",
    [[(0, 0, 1.0)], [(0, 1, 1.0), (1, 0, 1.0)], [(0, 1, -1.0)], [(0, 5, 1.0)], [(0, 1, math.nan)]],
)
def test_bad_edges_rejected(edges):
    with pytest.raises(ContractViolation):
        Graph.from_edges(3, edges + [(1, 2, 1.0)])


def test_isolated_node_rejected():
    with pytest.raises(ContractViolation, match="isolated"):
        Graph.from_edges(3, [(0, 1, 1.0)])


def test_adjacency_symmetrized():
    A = np.array([[0.0, 2.0], [0.0, 0.0]])
    g = Graph.from_adjacency(A)
    assert g.edges() == [(0, 1, 1.0)]
    np.testing.assert_array_equal(g.adjacency(), [[0, 1], [1, 0]])


def test_builders(rng):
    assert ring_graph(5).m == 5
    assert grid_graph(3, 4).m == 3 * 3 + 2 * 4
    g = erdos_renyi_graph(30, 0.2, rng)
    assert np.all(g.degrees > 0)


def test_graph_file_round_trip(tmp_path, rng):
    g = random_graph(rng, 12)
    path = tmp_path / "g.txt"
    write_graph(g, path)
    h = read_graph(path)
    assert h.edges() == g.edges()


@pytest.mark.parametrize(
    "text, match",
    [("2 1\n1 0 1.0\n", "i < j"), ("2 2\n0 1 1.0\n", "declares"), ("3\n", "header"), ("", "empty")],
)
def test_graph_file_errors(tmp_path, text, match):
    path = tmp_path / "g.txt"
    path.write_text(text)
    with pytest.raises(ContractViolation, match=match):
        read_graph(path)


def test_graph_file_comments(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("# path graph\n3 2\n0 1 1.0  # first\n\n1 2 2.5\n")
    assert read_graph(path).edges() == [(0, 1, 1.0), (1, 2, 2.5)]


# --- quadratic form and Rayleigh quotient --------------------------------------------


def test_quadform_k2():
    assert normalized_laplacian_quadform(k2(), np.array([1.0, -1.0])) == pytest.approx(4.0)


def test_quadform_kernel(rng):
    g = random_graph(rng, 15)
    H = np.sqrt(g.degrees)[:, None] * rng.standard_normal((1, 3))
    assert abs(normalized_laplacian_quadform(g, H)) < 1e-12


def test_quadform_dimension_mismatch():
    with pytest.raises(ContractViolation):
        normalized_laplacian_quadform(k2(), np.ones((3, 1)))
    with pytest.raises(ContractViolation):
        normalized_laplacian_quadform(k2(), np.array([1.0, np.inf]))


def test_quadform_matches_dense_n10(rng):
    g = random_graph(rng, 10)
    H = rng.standard_normal((10, 3))
    dense = np.trace(H.T @ dense_laplacian_oracle(g) @ H)
    assert normalized_laplacian_quadform(g, H) == pytest.approx(dense, rel=1e-10)


def test_rq_k2_limit():
    assert rayleigh_quotient(k2(), np.array([1.0, -1.0]), 1e-300) == pytest.approx(2.0)


def test_rq_zero_signal_and_kernel(rng):
    g = random_graph(rng, 8)
    assert rayleigh_quotient(g, np.zeros((8, 2))) == 0.0
    assert abs(rayleigh_quotient(g, np.sqrt(g.degrees))) < 1e-12
    with pytest.raises(ContractViolation):
        rayleigh_quotient(g, np.ones(8), eps_stab=0.0)


def test_rq_eigen_average_n20(rng):
    g = random_graph(rng, 20)
    lam, U = eig_sym(dense_laplacian_oracle(g))
    H = rng.standard_normal((20, 4))
    w = np.sum((U.T @ H) ** 2, axis=1)
    assert rayleigh_quotient(g, H) == pytest.approx(lam @ w / w.sum(), rel=1e-8)


@st.composite
def graph_and_signal(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(2, 40))
    r = np.random.default_rng(seed)
    g = random_graph(r, n)
    H = r.standard_normal((n, draw(st.integers(1, 4)))) * draw(st.floats(1e-3, 1e3))
    return g, H


@given(graph_and_signal())
def test_property_dirichlet_and_range(gh):
    g, H = gh
    L = dense_laplacian_oracle(g)
    np.testing.assert_allclose(normalized_laplacian(g), L, atol=1e-15)
    dense = float(np.trace(H.T @ L @ H))
    edge = normalized_laplacian_quadform(g, H)
    assert edge >= 0
    assert edge == pytest.approx(dense, rel=1e-10, abs=1e-300)
    rq = rayleigh_quotient(g, H)
    assert 0.0 <= rq < 2.0
    lam, _ = eig_sym(L)
    assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9


@given(graph_and_signal(), st.floats(1e-3, 1e3))
def test_property_rq_scale_invariant(gh, c):
    g, H = gh
    # the stabiliser breaks exact invariance, so take it to the limit
    assert rayleigh_quotient(g, c * H, 1e-300) == pytest.approx(rayleigh_quotient(g, H, 1e-300), rel=1e-9)


# --- eigen oracle ------------------------------------------------------------------


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_eig_identity(method):
    w, U = eig_sym(np.eye(3), method=method)
    np.testing.assert_allclose(w, [1, 1, 1])
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_eig_k2_and_p3(method):
    w, _ = eig_sym(normalized_laplacian(k2()), method=method)
    np.testing.assert_allclose(w, [0, 2], atol=1e-12)
    p3 = Graph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    M = normalized_laplacian(p3)
    w, U = eig_sym(M, method=method)
    np.testing.assert_allclose(w, [0, 1, 2], atol=1e-12)
    assert np.linalg.norm(M @ U - U * w) <= 1e-9 * np.linalg.norm(M)


def test_eig_rejects_asymmetric_and_large():
    with pytest.raises(ContractViolation, match="symmetric"):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ContractViolation):
        eig_sym(np.eye(513))
    with pytest.raises(ValueError):
        eig_sym(np.eye(2), method="nope")


@given(st.integers(0, 2**32 - 1), st.integers(1, 25))
def test_property_jacobi_contract(seed, n):
    r = np.random.default_rng(seed)
    B = r.standard_normal((n, n))
    M = B + B.T
    w, U = jacobi_eigh(M)
    assert np.all(np.diff(w) >= 0)
    assert np.linalg.norm(M @ U - U * w) <= 1e-9 * max(np.linalg.norm(M), 1.0)
    np.testing.assert_allclose(U.T @ U, np.eye(n), atol=1e-9)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(M), atol=1e-9 * max(1.0, np.abs(w).max()))


# --- spectral filter ---------------------------------------------------------------


def test_filter_identity(rng):
    g = random_graph(rng, 9)
    H = rng.standard_normal((9, 2))
    np.testing.assert_allclose(lowpass_filter_apply(g, H, np.ones_like), H, atol=1e-12)


def test_filter_kills_top_eigenvector():
    out = lowpass_filter_apply(k2(), np.array([1.0, -1.0]), lambda x: 1 - x / 2)
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_filter_hard_cutoff(rng):
    g = random_graph(rng, 20)
    lam, U = eig_sym(normalized_laplacian(g))
    out = lowpass_filter_apply(g, rng.standard_normal((20, 3)), lambda x: (x <= 1.0).astype(float))
    high = U[:, lam > 1.0 + 1e-9].T @ out
    assert np.abs(high).max() < 1e-12


def test_filter_rejects_increasing_response(rng):
    g = random_graph(rng, 6)
    with pytest.raises(ContractViolation, match="non-increasing"):
        lowpass_filter_apply(g, np.ones((6, 1)), lambda x: x)

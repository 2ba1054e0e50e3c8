import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from spectra.errors import ConvergenceError, DomainError
from spectra.linalg import (
    canonical_csr,
    dense_hermitian_eig,
    is_hermitian,
    lanczos_extremal,
    spmv,
    truncated_svd,
)
from spectra.spectral import LaplacianKind, build_laplacian

from conftest import directed, random_signed_digraph, undirected


def random_hermitian(rng, n, cplx=True):
    a = rng.standard_normal((n, n))
    if cplx:
        a = a + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def test_spmv_examples(rng):
    x = rng.standard_normal(5)
    np.testing.assert_array_equal(spmv(sp.identity(5, format="csr"), x), x)
    np.testing.assert_array_equal(spmv(sp.csr_matrix([[0, 1], [1, 0]]), [3.0, 4.0]), [4.0, 3.0])
    m = sp.random(8, 8, density=0.4, random_state=1, format="csr")
    xs = rng.standard_normal((8, 3))
    assert np.max(np.abs(spmv(m, xs) - m.toarray() @ xs)) <= 1e-14
    with pytest.raises(DomainError):
        spmv(m, np.ones(7))


def test_spmv_complex_promotes(rng):
    m = sp.csr_matrix(np.array([[1j, 0], [0, 1]]))
    out = spmv(m, np.array([1.0, 2.0]))
    assert np.iscomplexobj(out)
    np.testing.assert_array_equal(out, [1j, 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_spmv_linearity(n, seed, alpha, beta):
    r = np.random.default_rng(seed)
    m = sp.random(n, n, density=0.3, random_state=seed % 1000, format="csr")
    m = m + 1j * sp.random(n, n, density=0.3, random_state=seed % 1000 + 1, format="csr")
    x, y = r.standard_normal(n), r.standard_normal(n)
    lhs = spmv(m, alpha * x + beta * y)
    rhs = alpha * spmv(m, x) + beta * spmv(m, y)
    assert np.max(np.abs(lhs - rhs), initial=0) <= 1e-12 * max(1.0, np.max(np.abs(rhs), initial=0))


def test_canonical_csr_invariants():
    m = sp.csr_matrix((np.array([1.0, 0.0, 2.0, 3.0]), np.array([2, 0, 1, 2]), np.array([0, 2, 4])),
                      shape=(2, 3))
    c = canonical_csr(m)
    assert c.has_sorted_indices and c.nnz == 3
    assert np.all(np.diff(c.indptr) >= 0)
    assert np.all(c.data != 0)


def test_dense_eig_examples():
    s = dense_hermitian_eig(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(s.eigenvalues, [1, 2, 3])
    s = dense_hermitian_eig(np.array([[1.0, 1.0], [1.0, 1.0]]))
    np.testing.assert_allclose(s.eigenvalues, [0, 2], atol=1e-15)
    v = s.eigenvectors[:, 0]
    assert abs(abs(v @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-12
    g = undirected(3, [(0, 1, 1), (0, 2, -1), (1, 2, -1)])
    lap = build_laplacian(g, LaplacianKind("signed"))
    np.testing.assert_allclose(dense_hermitian_eig(lap).eigenvalues, [0, 3, 3], atol=1e-12)


def test_dense_eig_errors():
    with pytest.raises(DomainError):
        dense_hermitian_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DomainError):
        dense_hermitian_eig(np.eye(5), cap=4)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.booleans())
def test_dense_eig_contract(n, seed, cplx):
    m = random_hermitian(np.random.default_rng(seed), n, cplx)
    s = dense_hermitian_eig(m)
    fro = np.linalg.norm(m)
    u, lam = s.eigenvectors, s.eigenvalues
    assert np.all(np.diff(lam) >= 0)
    assert s.residual_norm <= 1e-8 * fro
    assert np.max(np.abs(u.conj().T @ u - np.eye(n))) <= 1e-8
    assert np.linalg.norm(m - (u * lam) @ u.conj().T) <= 1e-8 * fro
    assert lam.dtype == np.float64


def test_lanczos_full_matches_dense(rng):
    m = random_hermitian(rng, 10)
    lz = lanczos_extremal(sp.csr_matrix(m), 10)
    np.testing.assert_allclose(lz.eigenvalues, dense_hermitian_eig(m).eigenvalues, atol=1e-8)


def test_lanczos_diag_largest():
    m = sp.diags(np.arange(1.0, 101.0), format="csr")
    lz = lanczos_extremal(m, 3, "largest")
    np.testing.assert_allclose(lz.eigenvalues, [98, 99, 100], atol=1e-8)
    assert lz.residual_norm <= 1e-8 * np.sqrt(np.sum(np.arange(1.0, 101.0) ** 2))


def test_lanczos_balanced_magnetic_zero():
    # balanced: switching-equivalent to all-positive; directed orientation random
    rng = np.random.default_rng(4)
    n = 60
    side = rng.integers(0, 2, n)
    edges = set()
    while len(edges) < 200:
        u, v = rng.integers(0, n, 2)
        if u != v and (v, u) not in edges:
            edges.add((int(u), int(v)))
    g = directed(n, [(u, v, 1 if side[u] == side[v] else -1) for u, v in edges])
    lap = build_laplacian(g, LaplacianKind("signed_magnetic", True, 0.0))
    lz = lanczos_extremal(lap, 1, "smallest", seed=1)
    dense = dense_hermitian_eig(lap.toarray()).eigenvalues[0]
    assert abs(dense) < 1e-8
    assert abs(lz.eigenvalues[0]) < 1e-8


def test_lanczos_invariant_subspace_restart():
    # identity: every Krylov space is 1-dimensional
    lz = lanczos_extremal(sp.identity(6, format="csr"), 6)
    np.testing.assert_allclose(lz.eigenvalues, np.ones(6))


def test_lanczos_nonconvergence_carries_residual(rng):
    m = sp.csr_matrix(random_hermitian(rng, 200, cplx=False))
    with pytest.raises(ConvergenceError) as e:
        lanczos_extremal(m, 5, max_iter=6, tol=1e-14)
    assert np.isfinite(e.value.best_residual)


def test_lanczos_errors(rng):
    with pytest.raises(DomainError):
        lanczos_extremal(sp.identity(3, format="csr"), 4)
    with pytest.raises(DomainError):
        lanczos_extremal(sp.identity(3, format="csr"), 1, which="middle")


def test_svd_rank_one():
    u = np.arange(1.0, 7.0)
    v = np.array([2.0, -1.0, 0.5, 3.0])
    f = truncated_svd(sp.csr_matrix(np.outer(u, v)), 1, seed=0)
    assert abs(np.linalg.norm(f[:, 0]) - np.linalg.norm(u) * np.linalg.norm(v)) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)


def test_svd_zero_dim():
    f = truncated_svd(sp.identity(4, format="csr"), 0)
    assert f.shape == (4, 0)


def test_svd_deterministic_and_rank_deficient(rng):
    m = sp.csr_matrix(rng.standard_normal((20, 3)) @ rng.standard_normal((3, 20)))
    a = truncated_svd(m, 3, seed=5)
    b = truncated_svd(m, 3, seed=5)
    np.testing.assert_array_equal(a, b)
    with pytest.warns(UserWarning, match="numerical rank"):
        c = truncated_svd(m, 6, seed=5)
    assert np.all(c[:, 3:] == 0)
    with pytest.raises(DomainError):
        truncated_svd(m, 21)


def test_svd_exact_when_sketch_spans_range(rng):
    # rank <= d + oversampling: the range finder captures the column space exactly
    for _ in range(10):
        m = rng.standard_normal((50, 15)) @ rng.standard_normal((15, 50))
        f = truncated_svd(sp.csr_matrix(m), 10, seed=int(rng.integers(1 << 30)))
        ref = np.linalg.svd(m, compute_uv=False)[:10]
        np.testing.assert_allclose(np.linalg.norm(f, axis=0), ref, rtol=1e-10)


def test_svd_features_span_top_subspace(rng):
    # decaying spectrum (typical of adjacency features) is resolved to high accuracy
    q1, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    q2, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    sv = 0.5 ** np.arange(50)
    m = (q1 * sv) @ q2.T
    f = truncated_svd(sp.csr_matrix(m), 10, seed=3)
    np.testing.assert_allclose(np.linalg.norm(f, axis=0), sv[:10], rtol=1e-6)
    # columns are U_d * S_d: orthogonal with norms equal to singular values
    gram = f.T @ f
    np.testing.assert_allclose(gram, np.diag(sv[:10] ** 2), atol=1e-12)


def test_is_hermitian():
    assert is_hermitian(sp.csr_matrix(np.array([[1, 1j], [-1j, 2]])))
    assert not is_hermitian(np.array([[1, 1j], [1j, 2]]))

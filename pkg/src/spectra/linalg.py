"""Sparse/dense kernels: products, Hermitian eigensolvers, truncated SVD.

Sparse operators are scipy CSR matrices kept in canonical form (sorted
column indices, no stored zeros). Complex operators use complex128.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError
from .rng import make_rng

DENSE_CAP = 4096


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues with eigenvectors stored column-wise."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norm: float = 0.0

    @property
    def is_complex(self):
        return np.iscomplexobj(self.eigenvectors)

    def __len__(self):
        return len(self.eigenvalues)


def canonical_csr(m):
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def is_hermitian(m, tol=0.0):
    if sp.issparse(m):
        d = abs(m - m.conj().T)
        return (d.max() if d.nnz else 0.0) <= tol
    m = np.asarray(m)
    return m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T), initial=0.0) <= tol


def spmv(m, x):
    """Sparse (or dense) matrix times vector/matrix; complex promotes."""
    x = np.asarray(x)
    if m.shape[1] != x.shape[0]:
        raise DomainError(f"dimension mismatch: {m.shape} @ {x.shape}")
    return np.asarray(m @ x)


def _as_dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def _residuals(m, vals, vecs):
    r = spmv(m, vecs) - vecs * vals[None, :]
    return np.linalg.norm(r, axis=0)


def _fro(m):
    return spla.norm(m, "fro") if sp.issparse(m) else np.linalg.norm(m)


def dense_hermitian_eig(m, cap=DENSE_CAP, herm_tol=1e-12) -> Spectrum:
    """Full eigendecomposition of a real-symmetric or complex-Hermitian matrix."""
    a = _as_dense(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > cap:
        raise DomainError(f"dimension {n} exceeds dense eigensolver cap {cap}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.conj().T), initial=0.0) > herm_tol * scale:
        raise DomainError("matrix is not Hermitian")
    if n == 0:
        return Spectrum(np.zeros(0), np.zeros((0, 0), dtype=a.dtype), 0.0)
    vals, vecs = np.linalg.eigh(a)
    res = _residuals(a, vals, vecs)
    return Spectrum(vals, vecs, float(res.max()))


def lanczos_extremal(m, k, which="smallest", max_iter=None, tol=1e-8, seed=0) -> Spectrum:
    """Extremal eigenpairs of a sparse Hermitian matrix by Lanczos.

    Every new Lanczos vector is re-orthogonalized against the whole basis
    (twice, classical Gram-Schmidt). If the Krylov space becomes invariant
    before convergence the basis is extended with a fresh random direction,
    so k = n always terminates with the full spectrum. Converged means the
    explicit residual ||M v - lambda v|| <= tol * ||M||_F for all k pairs.
    """
    if which not in ("smallest", "largest"):
        raise DomainError(f"which must be 'smallest' or 'largest', got {which!r}")
    n = m.shape[0]
    if m.shape != (n, n):
        raise DomainError("expected a square matrix")
    if not 1 <= k <= n:
        raise DomainError(f"k must lie in [1, {n}], got {k}")
    if max_iter is None:
        max_iter = 10 * k + 200
    max_iter = max(max_iter, k)
    cplx = np.iscomplexobj(m.data if sp.issparse(m) else m)
    dtype = np.complex128 if cplx else np.float64
    rng = make_rng(seed)
    fro = _fro(m)
    bound = tol * max(fro, np.finfo(float).tiny)

    basis = np.zeros((n, min(n, max_iter) + 1), dtype=dtype)
    alphas, betas = [], []

    def fresh(j):
        v = rng.standard_normal(n).astype(dtype)
        if cplx:
            v = v + 1j * rng.standard_normal(n)
        for _ in range(2):
            v -= basis[:, :j] @ (basis[:, :j].conj().T @ v)
        nv = np.linalg.norm(v)
        return v / nv if nv > 1e-12 else None

    q = fresh(0)
    basis[:, 0] = q
    best = np.inf
    steps = min(n, max_iter)
    for j in range(steps):
        w = spmv(m, basis[:, j])
        a = np.real(np.vdot(basis[:, j], w))
        alphas.append(a)
        for _ in range(2):
            w = w - basis[:, :j + 1] @ (basis[:, :j + 1].conj().T @ w)
        b = np.linalg.norm(w)
        size = j + 1
        if size >= k and (size % 5 == 0 or size == steps or b <= 1e-10 * max(fro, 1.0)):
            vals, vecs, res = _ritz(m, basis[:, :size], alphas, betas, k, which)
            best = min(best, res.max())
            if res.max() <= bound:
                return Spectrum(vals, vecs, float(res.max()))
        if size == steps:
            break
        if b <= 1e-10 * max(fro, 1.0):
            nxt = fresh(size)
            if nxt is None:
                break
            betas.append(0.0)
            basis[:, size] = nxt
        else:
            betas.append(b)
            basis[:, size] = w / b
    vals, vecs, res = _ritz(m, basis[:, :len(alphas)], alphas, betas[:len(alphas) - 1], k, which)
    best = min(best, res.max())
    if res.max() <= bound:
        return Spectrum(vals, vecs, float(res.max()))
    raise ConvergenceError(f"Lanczos did not converge in {len(alphas)} iterations", best)


def _ritz(m, q, alphas, betas, k, which):
    size = q.shape[1]
    t = np.diag(np.asarray(alphas[:size])) + np.diag(np.asarray(betas[:size - 1]), 1) \
        + np.diag(np.asarray(betas[:size - 1]), -1)
    theta, s = np.linalg.eigh(t)
    sel = np.arange(k) if which == "smallest" else np.arange(size - k, size)
    vals = theta[sel]
    vecs = q @ s[:, sel]
    vecs /= np.linalg.norm(vecs, axis=0)
    return vals, vecs, _residuals(m, vals, vecs)


def truncated_svd(m, d, seed=0, n_oversamples=10, n_power_iter=2):
    """Rank-d features U_d * S_d by a randomized range finder.

    Gaussian sketch of width d + n_oversamples, `n_power_iter` rounds of
    re-orthonormalized power iteration, then an exact SVD of the projected
    matrix. Columns beyond the numerical rank are zero-filled.
    """
    rows, cols = m.shape
    if d < 0 or d > min(rows, cols):
        raise DomainError(f"d must lie in [0, {min(rows, cols)}], got {d}")
    if d == 0:
        return np.zeros((rows, 0))
    rng = make_rng(seed)
    width = min(d + n_oversamples, min(rows, cols))
    omega = rng.standard_normal((cols, width))
    q, _ = np.linalg.qr(spmv(m, omega))
    mt = m.T
    for _ in range(n_power_iter):
        z, _ = np.linalg.qr(spmv(mt, q))
        q, _ = np.linalg.qr(spmv(m, z))
    b = np.asarray(spmv(mt, q)).T  # q^T m, computed as (m^T q)^T for sparse m
    ub, s, _ = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :d]
    s = s[:d]
    rank_tol = s[0] * max(rows, cols) * np.finfo(float).eps if s.size and s[0] > 0 else 0.0
    low = s <= rank_tol
    if np.any(low):
        warnings.warn(f"requested {d} singular vectors but numerical rank is "
                      f"{int((~low).sum())}; zero-filling", stacklevel=2)
        s = np.where(low, 0.0, s)
    # deterministic sign: largest-magnitude entry of each column positive
    flip = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])])
    flip[flip == 0] = 1.0
    return u * flip * s

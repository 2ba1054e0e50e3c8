"""Laplacians of signed/directed graphs and graph-Fourier tooling.

Families: combinatorial (D - A), signed (|D| - A), magnetic (D - A_s * Phi^q)
and signed_magnetic (|D| - A_s * Phi^q), each optionally normalized by its
own degree matrix. Non-magnetic families read a directed graph through its
symmetrized adjacency A_s, so signed_magnetic at q = 0 coincides with signed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, IsolatedNodeError
from .graph import SignedDiGraph, drop_isolated, symmetrize
from .linalg import DENSE_CAP, Spectrum, canonical_csr, dense_hermitian_eig, lanczos_extremal, spmv

FAMILIES = ("combinatorial", "signed", "magnetic", "signed_magnetic")
Q_LIMITS = {"magnetic": 0.5, "signed_magnetic": 0.25}


@dataclass(frozen=True)
class LaplacianKind:
    family: str
    normalized: bool = False
    q: float | None = None

    def __post_init__(self):
        fam = self.family.replace("-", "_")
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise DomainError(f"unknown Laplacian family {self.family!r}")
        if fam in Q_LIMITS:
            q = 0.0 if self.q is None else float(self.q)
            if not 0.0 <= q < Q_LIMITS[fam]:
                raise DomainError(f"q must lie in [0, {Q_LIMITS[fam]}) for {fam}, got {q}")
            object.__setattr__(self, "q", q)
        elif self.q is not None:
            raise DomainError(f"q is only meaningful for magnetic families, not {fam}")

    @property
    def magnetic(self):
        return self.family in Q_LIMITS

    @property
    def signed_degree(self):
        """True when the degree matrix sums signed (not absolute) weights."""
        return self.family in ("combinatorial", "magnetic")


def _phase_adjacency(g: SignedDiGraph, q):
    """A^q = A_s * exp(i 2 pi q (A - A^T)), mirrored so that A^q is exactly Hermitian."""
    a = g.adjacency()
    a_s = symmetrize(g)
    upper = sp.triu(a_s, k=1).tocoo()
    # A - A^T evaluated on the upper-triangle pattern of A_s
    if upper.nnz:
        diff = np.asarray((a - a.T)[upper.row, upper.col]).ravel()
    else:
        diff = np.zeros(0)
    theta = 2.0 * np.pi * q * diff
    vals = upper.data * (np.cos(theta) + 1j * np.sin(theta))
    n = g.n_nodes
    r = np.concatenate([upper.row, upper.col])
    c = np.concatenate([upper.col, upper.row])
    v = np.concatenate([vals, np.conj(vals)])
    return canonical_csr(sp.csr_matrix((v, (r, c)), shape=(n, n)))


def _inv_sqrt_degrees(deg, g, signed=False):
    bad = np.flatnonzero(deg <= 0)
    if bad.size:
        i = int(bad[0])
        if signed and (deg[i] < 0 or symmetrize(g)[i].nnz > 0):
            raise DomainError(
                f"node {g.label(i)} has signed degree {deg[i]:g}; the normalized "
                "operator of this family is undefined on signed graphs")
        raise IsolatedNodeError(i, g.label(i))
    return 1.0 / np.sqrt(deg)


def _sym_scale(m, s):
    """diag(s) M diag(s) with each entry scaled by the single factor s_i*s_j,
    which keeps (conjugate) symmetry bit-exact."""
    c = m.tocoo()
    data = c.data * (s[c.row] * s[c.col])
    return canonical_csr(sp.csr_matrix((data, (c.row, c.col)), shape=m.shape))


def build_laplacian(g: SignedDiGraph, kind: LaplacianKind, *, _negate_degree=False):
    """Sparse Laplacian of the requested kind (complex for magnetic families).

    `_negate_degree` flips the degree term and exists only to mutation-test
    the property validators.
    """
    a_s = symmetrize(g)
    if kind.magnetic:
        off = _phase_adjacency(g, kind.q)
    else:
        off = a_s
    if kind.signed_degree:
        deg = np.asarray(a_s.sum(axis=1)).ravel()
    else:
        deg = np.asarray(abs(a_s).sum(axis=1)).ravel()
    diag = -deg if _negate_degree else deg
    if kind.normalized:
        # I - D^{-1/2} A D^{-1/2}, with the unit diagonal written exactly
        s = _inv_sqrt_degrees(deg, g, kind.signed_degree)
        diag = np.full(g.n_nodes, -1.0 if _negate_degree else 1.0)
        off = _sym_scale(off, s)
    return canonical_csr(sp.diags(diag, format="csr", dtype=off.dtype) - off)


def laplacian_dense(g, kind, **kw):
    return build_laplacian(g, kind, **kw).toarray()


def renormalized_propagation(g: SignedDiGraph, complex_q=None):
    """D~^{-1/2} (A + I) D~^{-1/2} with D~ = |D| + I (self-loops make D~ >= 1).

    With `complex_q` the off-diagonal part is the phase adjacency A^q.
    """
    a_s = symmetrize(g)
    off = a_s if complex_q is None else _phase_adjacency(g, complex_q)
    deg = np.asarray(abs(a_s).sum(axis=1)).ravel() + 1.0
    eye = sp.identity(g.n_nodes, format="csr", dtype=off.dtype)
    return _sym_scale(off + eye, 1.0 / np.sqrt(deg))


def normalized_signed_adjacency(g: SignedDiGraph):
    """D̄^{-1/2} A_s D̄^{-1/2}; errors on isolated nodes."""
    a_s = symmetrize(g)
    deg = np.asarray(abs(a_s).sum(axis=1)).ravel()
    return _sym_scale(a_s, _inv_sqrt_degrees(deg, g))


def pass_filters(g: SignedDiGraph):
    """(P_low, P_high) = (I + S, I - S) with S the normalized signed adjacency."""
    s = normalized_signed_adjacency(g)
    eye = sp.identity(g.n_nodes, format="csr")
    return canonical_csr(eye + s), canonical_csr(eye - s)


def eigendecompose(m, k=None, which="smallest", seed=0):
    """Dense for full spectra within the cap, Lanczos otherwise."""
    n = m.shape[0]
    if k is None or (k >= n and n <= DENSE_CAP):
        return dense_hermitian_eig(m)
    return lanczos_extremal(m, k, which=which, seed=seed)


def gft(spec: Spectrum, x):
    x = np.asarray(x)
    if x.shape[0] != spec.eigenvectors.shape[0]:
        raise DomainError(f"signal length {x.shape[0]} != {spec.eigenvectors.shape[0]} nodes")
    return spec.eigenvectors.conj().T @ x


def igft(spec: Spectrum, xhat):
    xhat = np.asarray(xhat)
    if xhat.shape[0] != spec.eigenvectors.shape[1]:
        raise DomainError("coefficient count does not match the spectrum")
    return spec.eigenvectors @ xhat


FILTER_KINDS = ("low_pass_2_minus_lambda", "high_pass_lambda", "abs_normalized", "polynomial")


@dataclass(frozen=True)
class FilterResponse:
    kind: str
    coefficients: tuple = ()
    lambda_max: float | None = None
    max_order: int = 16

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise DomainError(f"unknown filter kind {self.kind!r}")
        if self.kind == "polynomial" and len(self.coefficients) - 1 > self.max_order:
            raise DomainError(f"polynomial order exceeds K = {self.max_order}")

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        if self.kind == "low_pass_2_minus_lambda":
            return 2.0 - lam
        if self.kind == "high_pass_lambda":
            return lam.copy()
        if self.kind == "abs_normalized":
            if not self.lambda_max:
                raise DomainError("abs_normalized response needs lambda_max > 0")
            return 1.0 - np.abs(lam) / self.lambda_max
        # Horner, theta_0 first
        out = np.zeros_like(lam)
        for c in reversed(self.coefficients):
            out = out * lam + c
        return out

    @classmethod
    def polynomial(cls, coefficients):
        return cls("polynomial", tuple(float(c) for c in coefficients))

    @classmethod
    def abs_lowpass(cls, spec: Spectrum):
        return cls("abs_normalized", lambda_max=float(np.max(np.abs(spec.eigenvalues))))


def spectral_filter_apply(spec: Spectrum, resp: FilterResponse, x):
    """U diag(g(lambda)) U^H x."""
    xhat = gft(spec, x)
    gain = resp(spec.eigenvalues)
    if xhat.ndim == 2:
        gain = gain[:, None]
    return igft(spec, gain * xhat)


def tv_quadratic(lap, x):
    """x^H L x (real part; the imaginary part vanishes for Hermitian L)."""
    x = np.asarray(x)
    return float(np.real(np.vdot(x, spmv(lap, x))))


def tv_l1(lap, x):
    """||L x||_1."""
    return float(np.sum(np.abs(spmv(lap, np.asarray(x)))))


@dataclass(frozen=True)
class PropertyReport:
    kind: LaplacianKind
    min_eigenvalue: float
    max_eigenvalue: float
    passed: bool
    n_nodes: int = 0
    detail: str = ""


def _spectrum_bounds(g, kind, **kw):
    if kind.normalized:
        g, _ = drop_isolated(g)
    if g.n_nodes == 0:
        return g, 0.0, 0.0
    vals = dense_hermitian_eig(laplacian_dense(g, kind, **kw)).eigenvalues
    return g, float(vals[0]), float(vals[-1])


def verify_psd(g: SignedDiGraph, kind: LaplacianKind, tol=1e-8, **kw) -> PropertyReport:
    """Smallest eigenvalue >= -tol. Normalized kinds are checked on the
    subgraph without isolated nodes, where the operator is defined."""
    h, lo, hi = _spectrum_bounds(g, kind, **kw)
    return PropertyReport(kind, lo, hi, lo >= -tol, h.n_nodes, "psd")


def verify_eig_range(g: SignedDiGraph, kind: LaplacianKind, tol=1e-8, **kw) -> PropertyReport:
    """All eigenvalues of a normalized kind within [-tol, 2 + tol]."""
    if not kind.normalized:
        raise DomainError("eigenvalue range check applies to normalized kinds only")
    h, lo, hi = _spectrum_bounds(g, kind, **kw)
    return PropertyReport(kind, lo, hi, lo >= -tol and hi <= 2.0 + tol, h.n_nodes, "range")


def magnetic_embedding(g: SignedDiGraph, q, seed=0):
    """(Re v, Im v) of the eigenvector of the unnormalized signed magnetic
    Laplacian with the smallest eigenvalue (PSD, so smallest = smallest |.|)."""
    lap = build_laplacian(g, LaplacianKind("signed_magnetic", False, q))
    if g.n_nodes <= DENSE_CAP:
        v = dense_hermitian_eig(lap).eigenvectors[:, 0]
    else:
        v = lanczos_extremal(lap, 1, "smallest", seed=seed).eigenvectors[:, 0]
    v = np.asarray(v, dtype=np.complex128)
    return np.column_stack([v.real, v.imag])


def magnetic_cluster(g: SignedDiGraph, q, k, seed=0, n_init=50, return_embedding=False):
    """k-means (k-means++, `n_init` restarts) on the complex-plane embedding."""
    from sklearn.cluster import KMeans

    if g.n_nodes == 0:
        raise DomainError("cannot cluster an empty graph")
    emb = magnetic_embedding(g, q, seed=seed)
    if k <= 1:
        labels = np.zeros(g.n_nodes, dtype=np.int64)
    else:
        km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed % (2**32))
        labels = km.fit_predict(emb).astype(np.int64)
    return (labels, emb) if return_embedding else labels

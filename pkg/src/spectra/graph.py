"""Signed (optionally directed) graphs: storage, edge-list I/O and SSBM sampling."""

from __future__ import annotations

import io
import math
import os
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ParseError
from .rng import make_rng

DEGREE_MODES = ("signed", "absolute", "absolute-symmetric")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SignedDiGraph:
    """Immutable signed graph.

    Edges are held as three parallel arrays. An undirected graph stores each
    unordered pair once; its adjacency is symmetric. Self-loops are rejected:
    operators that need a self term add it analytically.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    sign: np.ndarray
    directed: bool = True
    node_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "src", _frozen(self.src, np.int64))
        object.__setattr__(self, "dst", _frozen(self.dst, np.int64))
        object.__setattr__(self, "sign", _frozen(self.sign, np.float64))
        n = int(self.n_nodes)
        object.__setattr__(self, "n_nodes", n)
        if n < 0:
            raise DomainError("n_nodes must be non-negative")
        if not (len(self.src) == len(self.dst) == len(self.sign)):
            raise DomainError("src, dst and sign must have equal length")
        if self.node_ids is not None:
            ids = tuple(str(s) for s in self.node_ids)
            if len(ids) != n:
                raise DomainError("node_ids length must equal n_nodes")
            object.__setattr__(self, "node_ids", ids)
        if len(self.src) == 0:
            return
        if self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= n:
            raise DomainError("edge endpoint out of range")
        if np.any(self.src == self.dst):
            i = int(np.flatnonzero(self.src == self.dst)[0])
            raise DomainError(f"self-loop at node {int(self.src[i])}")
        if not np.all(np.abs(self.sign) == 1.0):
            raise DomainError("edge signs must be +1 or -1")
        if self.directed:
            key = self.src * n + self.dst
        else:
            key = np.minimum(self.src, self.dst) * n + np.maximum(self.src, self.dst)
        if len(np.unique(key)) != len(key):
            raise DomainError("duplicate edge")

    @classmethod
    def from_edges(cls, n_nodes, edges: Iterable[Sequence], directed=True, node_ids=None):
        e = np.asarray(list(edges), dtype=np.float64).reshape(-1, 3)
        return cls(n_nodes, e[:, 0].astype(np.int64), e[:, 1].astype(np.int64), e[:, 2],
                   directed=directed, node_ids=node_ids)

    @property
    def n_edges(self):
        return len(self.src)

    @property
    def edges(self):
        return [(int(u), int(v), int(s)) for u, v, s in zip(self.src, self.dst, self.sign)]

    def label(self, i):
        return self.node_ids[i] if self.node_ids is not None else str(i)

    def adjacency(self):
        """A as CSR; symmetric for undirected graphs."""
        n = self.n_nodes
        if self.directed:
            r, c, v = self.src, self.dst, self.sign
        else:
            r = np.concatenate([self.src, self.dst])
            c = np.concatenate([self.dst, self.src])
            v = np.concatenate([self.sign, self.sign])
        a = sp.csr_matrix((v, (r, c)), shape=(n, n))
        a.sort_indices()
        return a

    def subgraph(self, keep_edges):
        """Same node set, subset of edges (boolean mask or index array)."""
        return SignedDiGraph(self.n_nodes, self.src[keep_edges], self.dst[keep_edges],
                             self.sign[keep_edges], self.directed, self.node_ids)

    def induced(self, nodes):
        """Induced subgraph on `nodes`, relabelled 0..len(nodes)-1 in the given order."""
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = np.full(self.n_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        keep = (remap[self.src] >= 0) & (remap[self.dst] >= 0)
        ids = None if self.node_ids is None else tuple(self.node_ids[i] for i in nodes)
        return SignedDiGraph(len(nodes), remap[self.src[keep]], remap[self.dst[keep]],
                             self.sign[keep], self.directed, ids)

    def permuted(self, perm):
        """Relabel node i as perm[i]."""
        perm = np.asarray(perm, dtype=np.int64)
        ids = None
        if self.node_ids is not None:
            ids = [""] * self.n_nodes
            for i, p in enumerate(perm):
                ids[p] = self.node_ids[i]
        return SignedDiGraph(self.n_nodes, perm[self.src], perm[self.dst], self.sign,
                             self.directed, ids)

    def __eq__(self, other):
        if not isinstance(other, SignedDiGraph):
            return NotImplemented
        return (self.n_nodes == other.n_nodes and self.directed == other.directed
                and self.node_ids == other.node_ids
                and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.sign, other.sign))

    __hash__ = None


@dataclass(frozen=True)
class DegreeVector:
    values: np.ndarray
    mode: str


@dataclass(frozen=True)
class SsbmParams:
    nodes_per_cluster: int
    p_intra: float
    p_inter: float
    flip_prob: float = 0.0
    n_clusters: int = 2
    directed: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.nodes_per_cluster < 1:
            raise DomainError("nodes_per_cluster must be >= 1")
        if self.n_clusters < 1:
            raise DomainError("n_clusters must be >= 1")
        for name in ("p_intra", "p_inter", "flip_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {p}")


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(source, directed=True) -> SignedDiGraph:
    """Parse `src dst sign` lines (whitespace or comma separated).

    `source` may be a path, a text/binary stream, bytes or str. Node ids are
    mapped to dense indices in order of first appearance. Only the sign of
    the third field is kept; extra trailing fields (e.g. timestamps) are
    ignored. Duplicate pairs keep the last sign; self-loops are dropped.
    """
    text = _read_text(source)
    index: dict[str, int] = {}
    pairs: dict[tuple[int, int], tuple[int, int, float]] = {}
    n_dup = n_self = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#%":
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        if len(parts) < 3:
            raise ParseError(f"expected 'src dst sign', got {raw!r}", lineno)
        try:
            w = float(parts[2])
        except ValueError:
            raise ParseError(f"sign field {parts[2]!r} is not a number", lineno) from None
        if w == 0.0 or math.isnan(w):
            raise ParseError(f"rejected edge with zero/undefined sign {parts[2]!r}", lineno)
        u = index.setdefault(parts[0], len(index))
        v = index.setdefault(parts[1], len(index))
        if u == v:
            n_self += 1
            continue
        key = (u, v) if directed else (min(u, v), max(u, v))
        if key in pairs:
            n_dup += 1
            del pairs[key]  # re-insert so the last occurrence sets the order
        pairs[key] = (u, v, 1.0 if w > 0 else -1.0)
    if n_dup:
        warnings.warn(f"{n_dup} duplicate edge(s); kept the last sign", stacklevel=2)
    if n_self:
        warnings.warn(f"{n_self} self-loop(s) dropped", stacklevel=2)
    if pairs:
        rows = list(pairs.values())
        uv = np.array([r[:2] for r in rows], dtype=np.int64)
        s = np.array([r[2] for r in rows])
    else:
        uv = np.zeros((0, 2), dtype=np.int64)
        s = np.zeros(0)
    return SignedDiGraph(len(index), uv[:, 0], uv[:, 1], s, directed=directed,
                         node_ids=tuple(index))


def _read_text(source):
    if isinstance(source, (str, os.PathLike)) and not isinstance(source, str):
        with open(source, "rb") as f:
            data = f.read()
    elif isinstance(source, str):
        if "\n" not in source and os.path.exists(source):
            with open(source, "rb") as f:
                data = f.read()
        else:
            return source
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    return data.decode("utf-8")


def serialize(g: SignedDiGraph) -> str:
    """Edge-list text that `load_edge_list` maps back to an identical graph.

    Isolated nodes cannot be expressed in an edge list, so graphs with
    isolated nodes round-trip only up to those nodes.
    """
    out = io.StringIO()
    for u, v, s in zip(g.src, g.dst, g.sign):
        out.write(f"{g.label(u)} {g.label(v)} {int(s)}\n")
    return out.getvalue()


def symmetrize(g: SignedDiGraph):
    """A_s = (A + A^T) / 2 as CSR with explicit zeros removed."""
    a = g.adjacency()
    if not g.directed:
        return a
    s = ((a + a.T) * 0.5).tocsr()
    s.eliminate_zeros()
    s.sort_indices()
    return s


def degrees(g: SignedDiGraph, mode="absolute") -> DegreeVector:
    if mode == "signed":
        vals = np.asarray(g.adjacency().sum(axis=1)).ravel()
    elif mode == "absolute":
        vals = np.asarray(abs(g.adjacency()).sum(axis=1)).ravel()
    elif mode == "absolute-symmetric":
        vals = np.asarray(abs(symmetrize(g)).sum(axis=1)).ravel()
    else:
        raise DomainError(f"unknown degree mode {mode!r}; expected one of {DEGREE_MODES}")
    return DegreeVector(vals.astype(np.float64), mode)


def isolated_nodes(g: SignedDiGraph):
    """Nodes whose absolute symmetric degree vanishes (includes nodes whose
    only links are conflicting reciprocal pairs)."""
    return np.flatnonzero(degrees(g, "absolute-symmetric").values == 0)


def drop_isolated(g: SignedDiGraph):
    """Returns (graph without isolated nodes, kept original indices)."""
    keep = np.setdiff1d(np.arange(g.n_nodes), isolated_nodes(g))
    return g.induced(keep), keep


def _triu_pair(k, n):
    # k-th pair (i < j) of an n-set in row-major order
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2).astype(np.int64)
    start = i * (2 * n - i - 1) // 2
    # correct float rounding at row boundaries
    over = start > k
    i[over] -= 1
    start = i * (2 * n - i - 1) // 2
    nxt = (i + 1) * (2 * n - i - 2) // 2
    under = nxt <= k
    i[under] += 1
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


def ssbm_generate(p: SsbmParams):
    """Sample a signed stochastic block model.

    Each candidate pair (ordered when directed, unordered otherwise) is an
    edge with probability p_intra (same cluster, sign +) or p_inter (sign -);
    every sign is then flipped independently with probability flip_prob.
    Edge counts per block are drawn binomially and positions uniformly
    without replacement, which is the same law as independent coin flips.
    Returns (graph, labels) with clusters laid out contiguously.
    """
    rng = make_rng(p.seed)
    n, k = p.nodes_per_cluster, p.n_clusters
    us, vs, ss = [], [], []
    for a in range(k):
        for b in range(k):
            if not p.directed and b < a:
                continue
            prob = p.p_intra if a == b else p.p_inter
            if a == b:
                m = n * (n - 1) if p.directed else n * (n - 1) // 2
            else:
                m = n * n
            if m == 0 or prob == 0.0:
                continue
            cnt = int(rng.binomial(m, prob))
            idx = np.sort(rng.choice(m, size=cnt, replace=False)) if cnt else np.zeros(0, np.int64)
            if a == b and p.directed:
                i = idx // (n - 1)
                r = idx % (n - 1)
                j = r + (r >= i)
            elif a == b:
                i, j = _triu_pair(idx, n)
            else:
                i, j = idx // n, idx % n
            us.append(i + a * n)
            vs.append(j + b * n)
            ss.append(np.full(cnt, 1.0 if a == b else -1.0))
    if us:
        u, v, s = np.concatenate(us), np.concatenate(vs), np.concatenate(ss)
    else:
        u = v = np.zeros(0, np.int64)
        s = np.zeros(0)
    if p.flip_prob > 0 and len(s):
        s = np.where(rng.random(len(s)) < p.flip_prob, -s, s)
    labels = np.repeat(np.arange(k), n)
    return SignedDiGraph(n * k, u, v, s, directed=p.directed), labels

"""Spectral signed GNNs built on the autodiff tape.

Sgcn1   low-pass propagation with the renormalized signed operator P.
S2gc    P^k X Theta, a single linear map after k propagations.
Sgcn2   attention-weighted low/high-pass aggregation, beta = tanh(a^T [h_i, h_j]).
MagNet  complex propagation with the signed magnetic operator P^q, complex
        weights carried as (real, imaginary) pairs.
EdgeMLP three-way link classifier on concatenated endpoint embeddings.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import DomainError
from .graph import SignedDiGraph, degrees, isolated_nodes, symmetrize
from .rng import make_rng
from .spectral import normalized_signed_adjacency, renormalized_propagation

MODELS = ("sgcn1", "sgcn2", "s2gc", "magnet")


@dataclass(frozen=True)
class ModelConfig:
    model: str = "sgcn1"
    n_layers: int = 2
    hidden_dim: int = 64
    q: float = 0.125
    dropout: float = 0.5
    s2gc_hops: int = 2

    def __post_init__(self):
        if self.model not in MODELS:
            raise DomainError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.n_layers < 1 or self.hidden_dim < 1:
            raise DomainError("n_layers and hidden_dim must be >= 1")
        if not 0.0 <= self.q < 0.25:
            raise DomainError(f"q must lie in [0, 0.25), got {self.q}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.s2gc_hops < 0:
            raise DomainError("s2gc_hops must be >= 0")


def glorot(rng, fan_in, fan_out, name):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name)


def _propagate_then_transform(p, h, theta):
    # cheaper association first; both orders are the same linear map
    if theta.shape[1] < theta.shape[0]:
        return ad.sparse_matmul(p, ad.matmul(h, theta))
    return ad.matmul(ad.sparse_matmul(p, h), theta)


class Model:
    params: list

    def named_parameters(self):
        return {p.name: p for p in self.params}

    def state_dict(self):
        return {p.name: p.data.copy() for p in self.params}

    def load_state_dict(self, state):
        for p in self.params:
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DomainError(f"shape mismatch for {p.name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()


class Sgcn1(Model):
    """H <- ReLU(P H Theta) per layer; the last layer stays linear (logits)."""

    def __init__(self, g: SignedDiGraph, in_dim, out_dim, cfg=ModelConfig(), rng=None):
        rng = make_rng(0 if rng is None else rng)
        self.cfg = cfg
        self.P = renormalized_propagation(g)
        dims = [in_dim] + [cfg.hidden_dim] * (cfg.n_layers - 1) + [out_dim]
        self.params = [glorot(rng, a, b, f"theta.{i}") for i, (a, b) in enumerate(zip(dims, dims[1:]))]

    def forward(self, x, train=False, rng=None):
        return sgcn1_forward(self.P, x, self.params, train, self.cfg.dropout, rng)


def sgcn1_forward(p, x, thetas, train=False, dropout=0.5, rng=None):
    h = ad.as_tensor(x)
    if h.shape[0] != p.shape[0]:
        raise DomainError(f"feature rows {h.shape[0]} != {p.shape[0]} nodes")
    for i, theta in enumerate(thetas):
        h = ad.dropout(h, dropout, train, rng)
        h = _propagate_then_transform(p, h, theta)
        if i < len(thetas) - 1:
            h = ad.relu(h)
    return h


class S2gc(Model):
    """P^hops X Theta."""

    def __init__(self, g: SignedDiGraph, in_dim, out_dim, cfg=ModelConfig(model="s2gc"), rng=None):
        rng = make_rng(0 if rng is None else rng)
        self.cfg = cfg
        self.P = renormalized_propagation(g)
        self.params = [glorot(rng, in_dim, out_dim, "theta")]
        self._cache = None

    def propagated(self, x):
        x = np.asarray(x.data if isinstance(x, ad.Tensor) else x, dtype=np.float64)
        if self._cache is not None and self._cache[0] is x:
            return self._cache[1]
        out = s2gc_propagate(self.P, x, self.cfg.s2gc_hops)
        self._cache = (x, out)
        return out

    def forward(self, x, train=False, rng=None):
        h = ad.dropout(ad.Tensor(self.propagated(x)), self.cfg.dropout, train, rng)
        return ad.matmul(h, self.params[0])


def s2gc_propagate(p, x, hops):
    if hops < 0:
        raise DomainError("hops must be >= 0")
    out = np.asarray(x, dtype=np.float64)
    for _ in range(hops):
        out = np.asarray(p @ out)
    return out


def s2gc_forward(p, x, theta, hops):
    return ad.matmul(ad.Tensor(s2gc_propagate(p, x, hops)), theta)


def sgcn2_attention(h, a, rows, cols):
    """beta_e = tanh(a^T [h_rows[e], h_cols[e]]) as an (E, 1) tensor."""
    h, a = ad.as_tensor(h), ad.as_tensor(a)
    if a.shape != (2 * h.shape[1], 1):
        raise DomainError(f"attention vector must have shape ({2 * h.shape[1]}, 1), got {a.shape}")
    # a^T [h_i, h_j] = (h a_1)_i + (h a_2)_j: score nodes once, then gather per edge
    k = h.shape[1]
    s1 = ad.matmul(h, ad.gather_rows(a, np.arange(k)))
    s2 = ad.matmul(h, ad.gather_rows(a, np.arange(k, 2 * k)))
    return ad.tanh(ad.add(ad.gather_rows(s1, rows), ad.gather_rows(s2, cols)))


class Sgcn2(Model):
    """h0 = ReLU(Theta1 x); h <- h + sum_j beta_ij A_s(i,j)/sqrt(d_i d_j) h_j; out = Theta2 h.

    Attention is recomputed every layer from that layer's input. Nodes with
    zero absolute degree are rejected unless `allow_isolated` (they then
    only carry their self term).
    """

    def __init__(self, g: SignedDiGraph, in_dim, out_dim, cfg=ModelConfig(model="sgcn2"),
                 rng=None, allow_isolated=False):
        rng = make_rng(0 if rng is None else rng)
        self.cfg = cfg
        self.n = g.n_nodes
        if allow_isolated and len(isolated_nodes(g)):
            s = _edge_normalized(g)
        else:
            s = normalized_signed_adjacency(g).tocoo()
        self.rows, self.cols = s.row.astype(np.int64), s.col.astype(np.int64)
        self.coef = s.data.reshape(-1, 1)
        hdim = cfg.hidden_dim
        self.theta1 = glorot(rng, in_dim, hdim, "theta1")
        self.attn = [glorot(rng, 2 * hdim, 1, f"attn.{i}") for i in range(cfg.n_layers)]
        self.theta2 = glorot(rng, hdim, out_dim, "theta2")
        self.params = [self.theta1, *self.attn, self.theta2]

    def forward(self, x, train=False, rng=None, beta=None):
        """`beta` (a constant) overrides the learned attention; a test hook."""
        p = self.cfg.dropout
        h = ad.relu(ad.matmul(ad.dropout(ad.as_tensor(x), p, train, rng), self.theta1))
        for a in self.attn:
            h = self.aggregate(h, a, train, rng, beta)
        return ad.matmul(ad.dropout(h, p, train, rng), self.theta2)

    def aggregate(self, h, a, train=False, rng=None, beta=None):
        if beta is None:
            b = sgcn2_attention(h, a, self.rows, self.cols)
            b = ad.dropout(b, self.cfg.dropout, train, rng)
            w = ad.mul(b, self.coef)
        else:
            w = ad.Tensor(beta * self.coef)
        msg = ad.mul(ad.gather_rows(h, self.cols), w)
        return ad.add(h, ad.scatter_add_rows(msg, self.rows, self.n))


def _edge_normalized(g):
    a_s = symmetrize(g).tocoo()
    deg = degrees(g, "absolute-symmetric").values
    data = a_s.data / np.sqrt(deg[a_s.row] * deg[a_s.col])
    return sp.coo_matrix((data, (a_s.row, a_s.col)), shape=a_s.shape)


class SignedMagNet(Model):
    """Complex layers: H <- ReLU_re/im((P^q H) Theta); readout [Re H, Im H] W."""

    def __init__(self, g: SignedDiGraph, in_dim, out_dim, cfg=ModelConfig(model="magnet"), rng=None):
        rng = make_rng(0 if rng is None else rng)
        self.cfg = cfg
        p = renormalized_propagation(g, cfg.q)
        self.P_re = p.real.tocsr()
        self.P_im = p.imag.tocsr()
        self.P_re.eliminate_zeros()
        self.P_im.eliminate_zeros()
        dims = [in_dim] + [cfg.hidden_dim] * cfg.n_layers
        self.theta_re, self.theta_im = [], []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            self.theta_re.append(glorot(rng, a, b, f"theta_re.{i}"))
            self.theta_im.append(glorot(rng, a, b, f"theta_im.{i}"))
        self.readout = glorot(rng, 2 * cfg.hidden_dim, out_dim, "readout")
        self.params = [*self.theta_re, *self.theta_im, self.readout]

    def embed(self, x, train=False, rng=None):
        """Complex embedding after the last layer as (real, imag) tensors."""
        return magnet_layers(self.P_re, self.P_im, x, self.theta_re, self.theta_im,
                             train, self.cfg.dropout, rng)

    def forward(self, x, train=False, rng=None):
        hr, hi = self.embed(x, train, rng)
        h = ad.dropout(ad.concat_cols([hr, hi]), self.cfg.dropout, train, rng)
        return ad.matmul(h, self.readout)


def complex_sparse_matmul(p_re, p_im, hr, hi):
    re = ad.sparse_matmul(p_re, hr)
    im = ad.sparse_matmul(p_im, hr)
    if hi is not None:
        re = ad.sub(re, ad.sparse_matmul(p_im, hi))
        im = ad.add(im, ad.sparse_matmul(p_re, hi))
    return re, im


def complex_matmul(hr, hi, t_re, t_im):
    re = ad.sub(ad.matmul(hr, t_re), ad.matmul(hi, t_im))
    im = ad.add(ad.matmul(hr, t_im), ad.matmul(hi, t_re))
    return re, im


def magnet_layers(p_re, p_im, x, theta_re, theta_im, train=False, dropout=0.5, rng=None):
    hr, hi = ad.as_tensor(x), None
    for t_re, t_im in zip(theta_re, theta_im):
        hr = ad.dropout(hr, dropout, train, rng)
        if hi is not None:
            hi = ad.dropout(hi, dropout, train, rng)
        ar, ai = complex_sparse_matmul(p_re, p_im, hr, hi)
        hr, hi = complex_matmul(ar, ai, t_re, t_im)
        hr, hi = ad.relu(hr), ad.relu(hi)
    return hr, hi


class EdgeMLP(Model):
    """logits(u, v) = ReLU([h_u, h_v] W1 + b1) W2 + b2, classes ordered (+, -, ?)."""

    n_classes = 3

    def __init__(self, embed_dim, hidden_dim=64, rng=None):
        rng = make_rng(0 if rng is None else rng)
        self.w1 = glorot(rng, 2 * embed_dim, hidden_dim, "mlp.w1")
        self.b1 = ad.parameter(np.zeros((1, hidden_dim)), "mlp.b1")
        self.w2 = glorot(rng, hidden_dim, self.n_classes, "mlp.w2")
        self.b2 = ad.parameter(np.zeros((1, self.n_classes)), "mlp.b2")
        self.params = [self.w1, self.b1, self.w2, self.b2]

    def forward(self, h, u, v):
        return edge_mlp(ad.gather_rows(h, u), ad.gather_rows(h, v), self.params)


def edge_mlp(h_u, h_v, weights):
    h_u, h_v = ad.as_tensor(h_u), ad.as_tensor(h_v)
    if h_u.shape != h_v.shape:
        raise DomainError(f"endpoint embeddings differ in shape: {h_u.shape} vs {h_v.shape}")
    w1, b1, w2, b2 = weights
    z = ad.relu(ad.add(ad.matmul(ad.concat_cols([h_u, h_v]), w1), b1))
    return ad.add(ad.matmul(z, w2), b2)


def build_model(cfg: ModelConfig, g: SignedDiGraph, in_dim, out_dim, rng=None, allow_isolated=False):
    if cfg.model == "sgcn1":
        return Sgcn1(g, in_dim, out_dim, cfg, rng)
    if cfg.model == "s2gc":
        return S2gc(g, in_dim, out_dim, cfg, rng)
    if cfg.model == "sgcn2":
        return Sgcn2(g, in_dim, out_dim, cfg, rng, allow_isolated=allow_isolated)
    return SignedMagNet(g, in_dim, out_dim, cfg, rng)


# checkpoint container: magic, u32 version, u32 header length, JSON header,
# then each parameter as little-endian float64 in header order
CKPT_MAGIC = b"SPECKPT\0"
CKPT_VERSION = 1


def save_checkpoint(path, params: dict, metadata: dict):
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()]
    header = json.dumps({"metadata": metadata, "params": entries}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(header)))
        f.write(header)
        for k in params:
            f.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (metadata, {name: array})."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CKPT_MAGIC:
        raise DomainError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen])
    off = 16 + hlen
    out = {}
    for e in header["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(e["shape"])
        out[e["name"]] = arr.astype(np.float64)
        off += 8 * count
    return header["metadata"], out


def config_dict(cfg: ModelConfig):
    return asdict(cfg)

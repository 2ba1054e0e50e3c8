"""A small reverse-mode autodiff tape over dense float64 numpy arrays.

Complex quantities are carried as (real, imaginary) Tensor pairs by the
callers, so every op here is real. Sparse operands (scipy matrices) are
constants: no gradient flows into graph structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DivergenceError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`.

        Leaves must have been zeroed since the previous backward pass.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        for t in order:
            if t.is_leaf and t.requires_grad and t.grad is not None:
                raise RuntimeError(
                    f"gradient of {t.name or 'leaf tensor'} already populated; "
                    "call zero_grad() before another backward pass")
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.is_leaf:
                if t.requires_grad:
                    t.grad = g
                continue
            for parent, pg in zip(t._parents, t._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _node(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, None, tuple(parents) if req else (), backward if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_2d(*ts):
    for t in ts:
        if t.data.ndim != 2:
            raise ValueError(f"expected a 2-D tensor, got shape {t.shape}")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_2d(a, b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def sparse_matmul(s, t):
    """Constant sparse (or dense) real matrix times Tensor."""
    t = as_tensor(t)
    if s.shape[1] != t.shape[0]:
        raise ValueError(f"sparse_matmul shape mismatch {s.shape} @ {t.shape}")
    st = s.T
    return _node(np.asarray(s @ t.data), (t,), lambda g: (np.asarray(st @ g),))


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def concat_cols(ts):
    ts = [as_tensor(t) for t in ts]
    _check_2d(*ts)
    widths = np.cumsum([t.shape[1] for t in ts])[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=1), ts,
                 lambda g: tuple(np.split(g, widths, axis=1)))


def concat_rows(ts):
    ts = [as_tensor(t) for t in ts]
    _check_2d(*ts)
    heights = np.cumsum([t.shape[0] for t in ts])[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=0), ts,
                 lambda g: tuple(np.split(g, heights, axis=0)))


def _incidence(idx, n):
    """n x E sparse matrix with a one at (idx[e], e); rows sum edge messages."""
    e = len(idx)
    return sp.csr_matrix((np.ones(e), (idx, np.arange(e))), shape=(n, e))


def gather_rows(t, idx):
    t = as_tensor(t)
    idx = np.asarray(idx, dtype=np.int64)
    n = t.shape[0]

    def back(g):
        if g.ndim == 1:
            return (np.bincount(idx, weights=g, minlength=n).astype(np.float64),)
        return (np.asarray(_incidence(idx, n) @ g),)

    return _node(t.data[idx], (t,), back)


def scatter_add_rows(t, idx, n_rows):
    """out[idx[e]] += t[e]; adjoint of gather_rows."""
    t = as_tensor(t)
    idx = np.asarray(idx, dtype=np.int64)
    if t.data.ndim == 1:
        out = np.bincount(idx, weights=t.data, minlength=n_rows).astype(np.float64)
    else:
        out = np.asarray(_incidence(idx, n_rows) @ t.data)
    return _node(out, (t,), lambda g: (g[idx],))


def dropout(t, p, train, rng):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    t = as_tensor(t)
    if not train or p == 0.0:
        return t
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    mask = (rng.random(t.shape) >= p) / (1.0 - p)
    return _node(t.data * mask, (t,), lambda g: (g * mask,))


def sum(t):  # noqa: A001 - mirrors the op name
    t = as_tensor(t)
    return _node(np.array(t.data.sum()), (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),))


def mean(t):
    t = as_tensor(t)
    n = t.data.size
    return _node(np.array(t.data.mean()), (t,), lambda g: (np.full(t.shape, float(g) / n),))


def softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, one_hot):
    """Mean over rows of -sum_c y_c log softmax(logits)_c."""
    logits = as_tensor(logits)
    y = np.asarray(one_hot, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"class count mismatch: logits {logits.shape} vs targets {y.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -(y * (z - logz)).sum() / n
    p = np.exp(z - logz)
    return _node(np.array(loss), (logits,),
                 lambda g: (float(g) * (p * y.sum(axis=1, keepdims=True) - y) / n,))


def binary_cross_entropy_with_logits(logits, targets):
    """Mean of softplus(x) - t*x, the stable form of -t log s(x) - (1-t) log(1-s(x))."""
    logits = as_tensor(logits)
    x = logits.data
    t = np.asarray(targets, dtype=np.float64).reshape(x.shape)
    loss = np.mean(np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x))))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    n = x.size
    return _node(np.array(loss), (logits,), lambda g: (float(g) * (sig - t) / n,))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState, lr, weight_decay=0.0):
    """One Adam update. The l2 term is coupled: weight_decay * param is added
    to the gradient before the moment updates."""
    for i, p in enumerate(params):
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name or i}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        if p.grad is None:
            continue
        g = p.grad + weight_decay * p.data
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[i], state.v[i] = m, v
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + state.eps)


def zero_grad(params):
    for p in params:
        p.grad = None


def grad_check(f, params, eps=1e-5):
    """Largest |analytic - central difference| / max(1, |a|, |n|) over all entries.

    `f` is a zero-argument callable building a scalar Tensor from `params`;
    it must be deterministic (dropout off).
    """
    zero_grad(params)
    f().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f().data)
            flat[j] = orig - eps
            fm = float(f().data)
            flat[j] = orig
            num = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[j]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    zero_grad(params)
    return worst


# operator sugar
Tensor.__add__ = lambda a, b: add(a, b)
Tensor.__radd__ = lambda a, b: add(b, a)
Tensor.__sub__ = lambda a, b: sub(a, b)
Tensor.__rsub__ = lambda a, b: sub(b, a)
Tensor.__mul__ = lambda a, b: mul(a, b)
Tensor.__rmul__ = lambda a, b: mul(b, a)
Tensor.__matmul__ = lambda a, b: matmul(a, b)
Tensor.__neg__ = lambda a: neg(a)

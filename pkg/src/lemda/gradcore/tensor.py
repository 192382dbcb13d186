"""Dense float64 tensors with tape-ordered reverse-mode differentiation.

Every tensor created while gradient recording is enabled gets a sequence
number from a process-wide counter. Children are always created after their
parents, so sorting the nodes reachable from a loss by descending sequence
number replays the recorded operations in exact reverse order. After a
backward pass the visited part of the graph is released.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_seq = itertools.count()
_state = threading.local()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def frozen(params: Iterable["Tensor"]):
    """Treat ``params`` as constants for the duration of the block."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = next(_seq)
        self.name = name

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked ancestor."""
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)

    pending = {id(loss): np.ones((), dtype=np.float64)}
    for t in order:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg

    for t in order:
        t._parents = ()
        t._backward = None


# -- broadcasting ------------------------------------------------------------
def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b or len(a) == 0 or len(b) == 0:
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise DimensionError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead > 0 else g


# -- elementwise -------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _node(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _node(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: add, sub, mul, relu, exp, log, tanh."""
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu, "exp": exp, "log": log,
             "tanh": tanh, "square": square}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*(as_tensor(a) for a in args))


# -- reductions and shape ----------------------------------------------------
def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    if axis is None:
        return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = x.data.sum(axis=axis)

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(out, (x,), grad_fn)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def index(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(x.data[idx]), (x,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {[u.shape for u in tensors]} disagree off axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _node(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list:
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover axis of shape {x.shape}")
    out, start = [], 0
    ax = axis % x.ndim
    for s in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + s)
        out.append(index(x, tuple(sl)))
        start += s
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {[t.shape for t in tensors]}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _node(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# -- linear algebra ----------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims allowed, a 2-D right operand is shared."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ in {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _node(ad @ bd, (a, b), grad_fn)


# -- probability -------------------------------------------------------------
def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    if axis not in (-1, logits.ndim - 1):
        raise ValueError("softmax is taken over the last axis")
    if logits.ndim == 0 or logits.shape[-1] < 1:
        raise DimensionError(f"softmax: bad shape {logits.shape}")
    s = _softmax_np(logits.data)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (logits,), grad_fn)


def log_softmax(logits: Tensor) -> Tensor:
    ls = _log_softmax_np(logits.data)
    s = np.exp(ls)
    return _node(ls, (logits,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def _check_logits(logits: Tensor, op: str) -> None:
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"{op}: logits must be [batch, classes>=2], got {logits.shape}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    _check_logits(logits, "cross_entropy")
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"cross_entropy: labels shape {labels.shape} for logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"cross_entropy: label outside [0, {c})")
    ls = _log_softmax_np(logits.data)
    rows = np.arange(b)
    loss = -ls[rows, labels].mean()

    def grad_fn(g):
        d = np.exp(ls)
        d[rows, labels] -= 1.0
        return (g * d / b,)

    return _node(np.asarray(loss), (logits,), grad_fn)


def soft_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy against per-row target distributions."""
    _check_logits(logits, "soft_cross_entropy")
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"soft_cross_entropy: targets {t.shape} vs logits {logits.shape}")
    b = logits.shape[0]
    ls = _log_softmax_np(logits.data)
    loss = -(t * ls).sum() / b

    def grad_fn(g):
        return (g * (np.exp(ls) * t.sum(axis=1, keepdims=True) - t) / b,)

    return _node(np.asarray(loss), (logits,), grad_fn)


def kl_divergence(p_logits, q_logits: Tensor, mask=None) -> Tensor:
    """Mean over masked rows of KL(softmax(p) || softmax(q)).

    ``p_logits`` is a fixed reference: no gradient flows into it. An all-false
    mask gives an exact zero that is still attached to ``q_logits``.
    """
    p = p_logits.data if isinstance(p_logits, Tensor) else np.asarray(p_logits, dtype=np.float64)
    _check_logits(q_logits, "kl_divergence")
    if p.shape != q_logits.shape:
        raise DimensionError(f"kl_divergence: shapes {p.shape} and {q_logits.shape}")
    b = p.shape[0]
    m = np.ones(b, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (b,):
        raise DimensionError(f"kl_divergence: mask shape {m.shape} for batch {b}")
    k = int(m.sum())
    lp = _log_softmax_np(p)
    lq = _log_softmax_np(q_logits.data)
    pp = np.exp(lp)
    w = m.astype(np.float64) / max(k, 1)
    rows = (pp * (lp - lq)).sum(axis=1)
    loss = float((rows * w).sum()) if k else 0.0

    def grad_fn(g):
        return (g * w[:, None] * (np.exp(lq) - pp),)

    return _node(np.asarray(loss), (q_logits,), grad_fn)


# -- layers as functions -----------------------------------------------------
def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding: token id outside [0, {vocab})")

    def grad_fn(g):
        full = np.zeros(weight.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _node(weight.data[ids], (weight,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    d = x.shape[-1]

    def grad_fn(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    assert gd.shape == (d,)
    return _node(out, (x, gain, bias), grad_fn)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


LOG_VAR_MIN, LOG_VAR_MAX = -30.0, 30.0


def gaussian_sample(mu: Tensor, log_var: Tensor, rng: np.random.Generator) -> Tensor:
    """Reparameterized draw mu + exp(log_var / 2) * eps, eps ~ N(0, I)."""
    if mu.shape != log_var.shape:
        raise DimensionError(f"gaussian_sample: mu {mu.shape} vs log_var {log_var.shape}")
    eps = rng.standard_normal(mu.shape)
    std = exp(mul(clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX), 0.5))
    return add(mu, mul(std, Tensor(eps)))


def gaussian_kl(mu: Tensor, log_var: Tensor) -> Tensor:
    """Per-sample KL(N(mu, diag(exp(log_var))) || N(0, I)), averaged over the batch.

    All axes after the first are summed.
    """
    lv = clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)
    terms = add(sub(add(square(mu), exp(lv)), 1.0), mul(lv, -1.0))
    per_row = sum_(reshape(terms, (terms.shape[0], -1)), axis=1)
    return mul(mean(per_row), 0.5)

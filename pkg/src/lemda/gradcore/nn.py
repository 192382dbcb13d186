"""Small layer library on top of the tensor ops."""

from __future__ import annotations

import math
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Container that discovers parameters from its attributes, in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, path: str):
    if isinstance(value, Parameter):
        value.name = path
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")


class Linear(Module):
    """y = x W + b with uniform fan-in initialization."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, scale: float = 1.0):
        bound = scale / math.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, (in_dim, out_dim)))
        self.bias = Parameter(rng.uniform(-bound, bound, (out_dim,)))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise T.DimensionError(f"Linear expects width {self.in_dim}, got shape {x.shape}")
        return x @ self.weight + self.bias


class MLP(Module):
    """Linear layers with relu between them and optional dropout after each activation."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, dropout: float = 0.0,
                 final_activation: bool = False):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.dropout = float(dropout)
        self.final_activation = final_activation

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None, train: bool = False):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = T.relu(x)
                x = T.dropout(x, self.dropout, rng, train)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class SelfAttention(Module):
    """Multi-head self-attention over [batch, tokens, width]."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(width, 3 * width, rng)
        self.out = Linear(width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, w = x.shape
        h, dh = self.heads, w // self.heads
        qkv = self.qkv(x)
        q, k, v = T.split(qkv, [w, w, w], axis=-1)

        def heads(t):
            return T.transpose(T.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

        q, k, v = heads(q), heads(k), heads(v)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.softmax(scores)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, w))
        return self.out(ctx)


class TransformerBlock(Module):
    """Post-norm encoder block: attention then feedforward, each with a residual."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator,
                 ff_mult: int = 2, dropout: float = 0.1):
        self.attn = SelfAttention(width, heads, rng)
        self.norm1 = LayerNorm(width)
        self.ff = MLP([width, ff_mult * width, width], rng)
        self.norm2 = LayerNorm(width)
        self.dropout = float(dropout)

    def __call__(self, x, rng=None, train=False):
        x = self.norm1(x + T.dropout(self.attn(x), self.dropout, rng, train))
        return self.norm2(x + T.dropout(self.ff(x), self.dropout, rng, train))


class EmbeddingMean(Module):
    """Mean of learned token embeddings, ignoring padding (id < 0)."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(dim), (vocab_size, dim)))

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        valid = ids >= 0
        counts = np.maximum(valid.sum(axis=1, keepdims=True), 1)
        weights = (valid / counts)[:, None, :]
        emb = T.embedding(self.weight, np.where(valid, ids, 0))
        pooled = T.matmul(Tensor(weights), emb)
        return T.reshape(pooled, (ids.shape[0], self.weight.shape[1]))

"""Layers built on :mod:`tfhtr.tensor`.

Sequences are laid out batch-first as (batch, length, features).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise KeyError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)
            p.zero_grad()


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, n: int, dtype, eps: float = 1e-5):
        self.gain = Parameter(np.ones(n, dtype=dtype))
        self.bias = Parameter(np.zeros(n, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: tuple[int, int],
                 rng: np.random.Generator, dtype, bias: bool = False):
        fan_in, fan_out = c_in * kernel * kernel, c_out * kernel * kernel
        self.weight = Parameter(xavier_uniform(rng, (kernel, kernel, c_in, c_out), fan_in, fan_out, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = tuple(stride)
        self.padding = (kernel // 2, kernel // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, dtype):
        # unit variance, so token identity is not swamped by the temporal encoding
        self.table = Parameter(rng.standard_normal((n, dim)).astype(dtype))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.table, ids)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, activation: str, rng, dtype):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)
        self.activation = activation

    def __call__(self, x: Tensor, rng=None, p: float = 0.0) -> Tensor:
        h = self.fc1(x)
        h = T.relu(h) if self.activation == "relu" else T.gelu(h)
        h = T.dropout(h, p, rng, self.training)
        return self.fc2(h)


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention.

    ``scale="model"`` divides logits by sqrt(feature size), ``"head"`` by
    sqrt(feature size / heads).
    """

    def __init__(self, dim: int, heads: int, rng, dtype, scale: str = "model", dropout: float = 0.0):
        self.q_proj = Linear(dim, dim, rng, dtype)
        self.k_proj = Linear(dim, dim, rng, dtype)
        self.v_proj = Linear(dim, dim, rng, dtype)
        self.out_proj = Linear(dim, dim, rng, dtype)
        self.heads = heads
        self.dim = dim
        self.head_dim = dim // heads
        self.scale = 1.0 / math.sqrt(dim if scale == "model" else self.head_dim)
        self.dropout = dropout

    def project_kv(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Keys as (B, H, d, L) and values as (B, H, L, d)."""
        b, n, _ = x.shape
        k = self.k_proj(x).reshape(b, n, self.heads, self.head_dim).transpose(0, 2, 3, 1)
        v = self.v_proj(x).reshape(b, n, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        return k, v

    def attend(self, query: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
               rng=None) -> tuple[Tensor, Tensor]:
        """Attend ``query`` (B, Lq, D) over projected keys/values.

        ``mask`` broadcasts to (B, H, Lq, Lk); True marks a blocked pair.
        Returns the output (B, Lq, D) and attention weights (B, H, Lq, Lk).
        """
        b, n, _ = query.shape
        q = self.q_proj(query).reshape(b, n, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        scores = (q @ k) * self.scale
        if mask is not None:
            scores = T.masked_fill(scores, mask, -np.inf)
        weights = T.softmax(scores, axis=-1)
        ctx = T.dropout(weights, self.dropout, rng, self.training) @ v
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, n, self.dim)
        return self.out_proj(ctx), weights

    def __call__(self, query: Tensor, source: Tensor, mask=None, rng=None):
        k, v = self.project_kv(source)
        return self.attend(query, k, v, mask, rng)


class _Sublayers(Module):
    def __init__(self, dim: int, n: int, dtype, eps: float, norm_position: str, dropout: float):
        self.norms = [LayerNorm(dim, dtype, eps) for _ in range(n)]
        self.norm_position = norm_position
        self.p = dropout

    def apply(self, i: int, x: Tensor, fn, rng) -> Tensor:
        """Residual sublayer ``i`` with post- or pre-normalisation."""
        if self.norm_position == "post":
            return self.norms[i](x + T.dropout(fn(x), self.p, rng, self.training))
        return x + T.dropout(fn(self.norms[i](x)), self.p, rng, self.training)


class EncoderBlock(Module):
    """Self-attention then feed-forward, each wrapped in a residual sublayer."""

    def __init__(self, dim, heads, hidden, rng, dtype, *, scale="model", dropout=0.1,
                 activation="relu", norm_position="post", eps=1e-5):
        self.attn = MultiHeadAttention(dim, heads, rng, dtype, scale, dropout)
        self.ffn = FeedForward(dim, hidden, activation, rng, dtype)
        self.sub = _Sublayers(dim, 2, dtype, eps, norm_position, dropout)
        self.p = dropout
        self.last_attention: Tensor | None = None

    def __call__(self, x: Tensor, key_mask=None, rng=None) -> Tensor:
        def attn(h):
            out, self.last_attention = self.attn(h, h, key_mask, rng)
            return out

        x = self.sub.apply(0, x, attn, rng)
        return self.sub.apply(1, x, lambda h: self.ffn(h, rng, self.p), rng)


class DecoderBlock(Module):
    """Masked self-attention, optional cross-attention, then feed-forward."""

    def __init__(self, dim, heads, hidden, rng, dtype, *, self_attention=True, cross_attention=True,
                 scale="model", dropout=0.1, activation="relu", norm_position="post", eps=1e-5):
        self.self_attn = MultiHeadAttention(dim, heads, rng, dtype, scale, dropout) if self_attention else None
        self.cross_attn = MultiHeadAttention(dim, heads, rng, dtype, scale, dropout) if cross_attention else None
        self.ffn = FeedForward(dim, hidden, activation, rng, dtype)
        n = 1 + int(self_attention) + int(cross_attention)
        self.sub = _Sublayers(dim, n, dtype, eps, norm_position, dropout)
        self.p = dropout
        self.last_cross_attention: Tensor | None = None

    def __call__(self, x: Tensor, memory_kv, self_mask, memory_mask, rng=None) -> Tensor:
        i = 0
        if self.self_attn is not None:
            def sa(h):
                return self.self_attn(h, h, self_mask, rng)[0]

            x = self.sub.apply(i, x, sa, rng)
            i += 1
        if self.cross_attn is not None:
            def ca(h):
                out, self.last_cross_attention = self.cross_attn.attend(h, *memory_kv, memory_mask, rng)
                return out

            x = self.sub.apply(i, x, ca, rng)
            i += 1
        return self.sub.apply(i, x, lambda h: self.ffn(h, rng, self.p), rng)

    def step(self, x: Tensor, cache: dict, memory_kv, memory_mask) -> Tensor:
        """Process one new position ``x`` (B, 1, D) given cached earlier keys/values.

        ``cache`` holds the self-attention keys/values of earlier positions
        and is extended in place. Inference only (no dropout).
        """
        i = 0
        if self.self_attn is not None:
            def sa(h):
                k, v = self.self_attn.project_kv(h)
                if "k" in cache:
                    k = Tensor(np.concatenate([cache["k"].data, k.data], axis=-1))
                    v = Tensor(np.concatenate([cache["v"].data, v.data], axis=-2))
                cache["k"], cache["v"] = k, v
                return self.self_attn.attend(h, k, v, None)[0]

            x = self.sub.apply(i, x, sa, None)
            i += 1
        if self.cross_attn is not None:
            def ca(h):
                out, self.last_cross_attention = self.cross_attn.attend(h, *memory_kv, memory_mask)
                return out

            x = self.sub.apply(i, x, ca, None)
            i += 1
        return self.sub.apply(i, x, lambda h: self.ffn(h), None)

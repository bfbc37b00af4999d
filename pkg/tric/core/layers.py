"""
Parameter containers and the small set of layers the denoiser is built from.
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class Module:
    """
    Base container. Parameters are ``Tensor`` attributes with
    ``requires_grad=True``; sub-modules may be attributes, lists or dicts.
    Iteration order is attribute definition order, so parameter names and
    reduction order are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            yield from _walk(full, value)

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"State mismatch. Missing: {missing}; unexpected: {unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=p.dtype)
            if value.shape != p.shape:
                raise nc.ShapeMismatchError(f"Parameter '{name}': expected shape {p.shape}, got {value.shape}")
            p.data[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(name: str, value) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{name}.{key}", item)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, dtype=nc.DEFAULT_DTYPE):
        self.weight = nc.kaiming_uniform(rng, (in_features, out_features), fan_in=in_features, dtype=dtype)
        self.bias = nc.zeros((out_features,), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return nc.linear(x, self.weight, self.bias)

    def zero_(self):
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=nc.DEFAULT_DTYPE, eps: float = 1e-5):
        self.gamma = nc.ones((dim,), dtype=dtype)
        self.beta = nc.zeros((dim,), dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return nc.layer_norm(x, self.gamma, self.beta, self.eps)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, dtype=nc.DEFAULT_DTYPE, eps: float = 1e-5):
        if groups < 1 or channels % groups != 0:
            raise nc.ShapeMismatchError(f"GroupNorm: {channels} channels are not divisible by {groups} groups")
        self.groups = groups
        self.gamma = nc.ones((channels,), dtype=dtype)
        self.beta = nc.zeros((channels,), dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return nc.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    """Channels-last 1-D convolution with "same" padding along ``axis``."""

    def __init__(self, channels_in: int, channels_out: int, kernel: int, axis: int,
                 rng: np.random.Generator, kind: str = "plain", dtype=nc.DEFAULT_DTYPE):
        self.axis = axis
        self.kind = kind
        if kind == "depthwise":
            if channels_in != channels_out:
                raise nc.ShapeMismatchError(
                    f"depthwise Conv1d keeps the channel count, got {channels_in} -> {channels_out}")
            self.weight = nc.kaiming_uniform(rng, (kernel, channels_in), fan_in=kernel, dtype=dtype)
        elif kind == "plain":
            self.weight = nc.kaiming_uniform(rng, (kernel, channels_in, channels_out),
                                             fan_in=kernel * channels_in, dtype=dtype)
        elif kind == "pointwise":
            self.weight = nc.kaiming_uniform(rng, (channels_in, channels_out), fan_in=channels_in, dtype=dtype)
        else:
            raise ValueError(f"Unknown Conv1d kind '{kind}'")
        self.bias = nc.zeros((channels_out,), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return nc.conv1d(x, self.weight, self.bias, axis=self.axis, kind=self.kind)

    def zero_(self):
        self.weight.data[...] = 0.0
        self.bias.data[...] = 0.0


class FeedForward(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, dim_in: int, dim_hidden: int, dim_out: int, rng: np.random.Generator,
                 dtype=nc.DEFAULT_DTYPE):
        self.fc1 = Linear(dim_in, dim_hidden, rng, dtype=dtype)
        self.fc2 = Linear(dim_hidden, dim_out, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(nc.gelu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., S, D] -> [..., H, S, D/H]."""
    *lead, length, dim = x.shape
    x = x.reshape(tuple(lead) + (length, heads, dim // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return x.transpose(axes)


def merge_heads(x: Tensor) -> Tensor:
    """[..., H, S, d] -> [..., S, H*d]."""
    *lead, heads, length, dim = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return x.transpose(axes).reshape(tuple(lead) + (length, heads * dim))


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention over the second-to-last axis.
    ``key_mask`` ([..., S_k], True = attend) excludes padded keys.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dim_kv: Optional[int] = None,
                 dtype=nc.DEFAULT_DTYPE):
        if dim % heads != 0:
            raise nc.ShapeMismatchError(f"Attention width {dim} is not divisible by {heads} heads")
        dim_kv = dim_kv or dim
        self.heads = heads
        self.query = Linear(dim, dim, rng, dtype=dtype)
        self.key = Linear(dim_kv, dim, rng, dtype=dtype)
        self.value = Linear(dim_kv, dim, rng, dtype=dtype)
        self.out = Linear(dim, dim, rng, dtype=dtype)

    def attend(self, queries: Tensor, keys: Tensor, key_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
        q = split_heads(self.query(queries), self.heads)
        k = split_heads(self.key(keys), self.heads)
        v = split_heads(self.value(keys), self.heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        scores = nc.matmul(q, k.transpose(_swap_last(k.ndim))) * scale
        mask = None
        if key_mask is not None:
            mask = np.expand_dims(np.expand_dims(key_mask, -2), -3)
        weights = nc.softmax(scores, axis=-1, mask=mask)
        return self.out(merge_heads(nc.matmul(weights, v))), weights

    def forward(self, queries: Tensor, keys: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        return self.attend(queries, keys, key_mask)[0]


def _swap_last(ndim: int) -> Tuple[int, ...]:
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)

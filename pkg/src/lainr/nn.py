"""Layers built from :mod:`lainr.tensor` primitives."""

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Parameter, Tensor


class Module:
    """Container that discovers parameters through its attributes.

    Attribute order is insertion order, so parameter enumeration is
    deterministic and matches between two identically built modules.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# Weight std is INIT_GAIN / sqrt(fan_in): the variance of a uniform draw on
# [-1/sqrt(fan_in), 1/sqrt(fan_in)].
INIT_GAIN = 1.0 / math.sqrt(3.0)


def gaussian(rng, shape, std):
    return rng.normal(0.0, std, size=shape).astype(T.get_default_dtype())


class Linear(Module):
    """``y = x W^T + b`` with weight of shape (out_features, in_features)."""

    def __init__(self, in_features, out_features, rng, bias=True, std=None):
        self.in_features = in_features
        self.out_features = out_features
        if std is None:
            std = INIT_GAIN / math.sqrt(in_features)
        self.weight = Parameter(gaussian(rng, (out_features, in_features), std))
        self.bias = Parameter(np.zeros(out_features, dtype=T.get_default_dtype())) if bias else None

    def forward(self, x):
        x = T.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last dimension {self.in_features}, got shape {x.shape}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.in_features) if x.ndim != 2 else x
        y = flat @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(*lead, self.out_features) if x.ndim != 2 else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        dtype = T.get_default_dtype()
        self.eps = eps
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x):
        return T.layer_norm(x, self.gain, self.bias, self.eps)


def split_heads(x, heads):
    """(B, N, E) -> (B, heads, N, E // heads)."""
    b, n, e = x.shape
    return x.reshape(b, n, heads, e // heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def scaled_dot_product_attention(q, k, v):
    """Attention over the second-to-last axis; returns (output, weights)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = T.scale(q @ T.swapaxes(k, -1, -2), scale)
    weights = T.softmax(logits, axis=-1)
    return weights @ v, weights


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention.

    ``forward(query, context)`` attends from every query position to every
    context position.  With ``project=False`` the query, key and value are
    used as given and heads are concatenated without an output projection.
    """

    def __init__(self, embed_dim, num_heads, rng, context_dim=None, project=True):
        if num_heads < 1 or embed_dim % num_heads:
            raise ConfigError(f"embedding width {embed_dim} is not divisible by {num_heads} heads",
                              field="num_heads")
        context_dim = embed_dim if context_dim is None else context_dim
        if not project and context_dim != embed_dim:
            raise ConfigError("attention without projections needs equal query and context widths")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.project = project
        if project:
            self.q_proj = Linear(embed_dim, embed_dim, rng)
            self.k_proj = Linear(context_dim, embed_dim, rng)
            self.v_proj = Linear(context_dim, embed_dim, rng)
            self.out_proj = Linear(embed_dim, embed_dim, rng)

    def forward(self, query, context, return_weights=False):
        query, context = T.as_tensor(query), T.as_tensor(context)
        if context.shape[1] == 0:
            raise ContractError("attention context is empty")
        if self.project:
            q, k, v = self.q_proj(query), self.k_proj(context), self.v_proj(context)
        else:
            q, k, v = query, context, context
        out, weights = scaled_dot_product_attention(
            split_heads(q, self.num_heads), split_heads(k, self.num_heads), split_heads(v, self.num_heads))
        out = merge_heads(out)
        if self.project:
            out = self.out_proj(out)
        return (out, weights) if return_weights else out

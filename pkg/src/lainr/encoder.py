"""Transformer encoder turning a data instance into a set of latent tokens."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .nn import LayerNorm, Linear, Module, MultiHeadAttention, gaussian
from .tensor import Parameter


@dataclass
class EncoderConfig:
    num_blocks: int = 6
    num_heads: int = 12
    head_dim: int = 64
    R: int = 256
    patch_size: int = 9
    pos_embed: bool = True
    token_init_std: float = 0.02

    @property
    def embed_dim(self):
        return self.num_heads * self.head_dim

    def validate(self):
        for name in ("num_blocks", "num_heads", "head_dim", "R", "patch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder.{name} must be positive", field=f"encoder.{name}")
        return self


def padded_grid(height, width, patch_size):
    """Number of patch rows and columns after zero-padding to a multiple."""
    return -(-height // patch_size), -(-width // patch_size)


def patchify(array, patch_size):
    """Split an (H, W, C) image or (V, H, W, C) view stack into flat patches.

    Edges are zero-padded up to a multiple of ``patch_size``.  Patches are
    ordered row-major within a view and views follow each other, giving
    shape (num_tokens, patch_size * patch_size * C).
    """
    array = np.asarray(array)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4:
        raise ContractError(f"expected an (H, W, C) or (V, H, W, C) array, got shape {array.shape}")
    v, h, w, c = array.shape
    p = int(patch_size)
    if p < 1 or p > h or p > w:
        raise ContractError(f"patch size {p} does not fit a {h}x{w} image")
    gh, gw = padded_grid(h, w, p)
    padded = np.zeros((v, gh * p, gw * p, c), dtype=array.dtype)
    padded[:, :h, :w] = array
    patches = padded.reshape(v, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5)
    return patches.reshape(v * gh * gw, p * p * c)


def unpatchify(tokens, patch_size, height, width, channels, views=None):
    """Inverse of :func:`patchify`, cropping the zero padding."""
    p = int(patch_size)
    gh, gw = padded_grid(height, width, p)
    nv = 1 if views is None else views
    grid = np.asarray(tokens).reshape(nv, gh, gw, p, p, channels).transpose(0, 1, 3, 2, 4, 5)
    images = grid.reshape(nv, gh * p, gw * p, channels)[:, :height, :width]
    return images[0] if views is None else images


class EncoderBlock(Module):
    """Pre-norm self-attention block with a ReLU feed-forward of width 4E."""

    def __init__(self, embed_dim, num_heads, rng):
        self.norm1 = LayerNorm(embed_dim)
        self.attn = MultiHeadAttention(embed_dim, num_heads, rng)
        self.norm2 = LayerNorm(embed_dim)
        self.fc1 = Linear(embed_dim, 4 * embed_dim, rng)
        self.fc2 = Linear(4 * embed_dim, embed_dim, rng)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.fc2(T.relu(self.fc1(self.norm2(x))))


class LatentEncoder(Module):
    """Maps patch tokens of shape (B, N, patch_dim) to latents (B, R, d_latent).

    ``R`` learnable tokens are appended after the data tokens; the encoder
    output at those positions, after a final layer norm and a linear map,
    forms the latent set.  Positional embeddings are added to data tokens
    only, so the learnable tokens carry no predefined order.
    """

    def __init__(self, patch_dim, num_data_tokens, d_latent, config, rng):
        config.validate()
        self.config = config
        self.patch_dim = patch_dim
        self.num_data_tokens = num_data_tokens
        self.d_latent = d_latent
        e = config.embed_dim
        self.patch_embed = Linear(patch_dim, e, rng)
        self.pos_embed = Parameter(gaussian(rng, (num_data_tokens, e), 0.02)) if config.pos_embed else None
        self.latent_tokens = Parameter(gaussian(rng, (config.R, e), config.token_init_std))
        self.blocks = [EncoderBlock(e, config.num_heads, rng) for _ in range(config.num_blocks)]
        self.norm = LayerNorm(e)
        self.proj = Linear(e, d_latent, rng)

    def embed(self, tokens):
        tokens = T.as_tensor(np.asarray(tokens, dtype=self.patch_embed.weight.dtype))
        if tokens.ndim == 2:
            tokens = tokens.reshape(1, *tokens.shape)
        b, n, pd = tokens.shape
        if n == 0:
            raise ContractError("encoder received an empty token sequence")
        if pd != self.patch_dim:
            raise ContractError(f"patch vectors have width {pd}, encoder expects {self.patch_dim}")
        x = self.patch_embed(tokens)
        if self.pos_embed is not None:
            if n != self.num_data_tokens:
                raise ContractError(
                    f"got {n} data tokens but positional embeddings exist for {self.num_data_tokens}")
            x = x + self.pos_embed
        return x

    def run_blocks(self, x):
        """Run the transformer on embedded data tokens (B, N, E)."""
        b = x.shape[0]
        learnable = self.latent_tokens.reshape(1, *self.latent_tokens.shape)
        ones = T.Tensor(np.ones((b, 1, 1), dtype=self.latent_tokens.dtype))
        h = T.concat([x, learnable * ones], axis=1)
        for block in self.blocks:
            h = block(h)
        out = self.norm(h[:, x.shape[1]:])
        return self.proj(out)

    def forward(self, tokens):
        return self.run_blocks(self.embed(tokens))

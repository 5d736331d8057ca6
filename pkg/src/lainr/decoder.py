"""Coordinate decoders conditioned on a set of latent tokens.

The default ``full`` variant queries the latent tokens with a cross-attention
whose query is a frequency feature of the coordinate, then splits the
resulting modulation vector into ``L`` bands with their own bandwidths and
composes them coarse-to-fine through a ReLU stack.  The other variants swap
one or both stages for the instance-pattern-composer (IPC) style modulation,
in which the tokens act as the rows of a weight matrix applied to a shared
coordinate embedding.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .coords import BandwidthSpec, fourier_features
from .errors import ConfigError, ContractError
from .nn import INIT_GAIN, Linear, Module, MultiHeadAttention

VARIANTS = ("full", "no_sta", "no_multifm", "ipc_baseline")


@dataclass
class DecoderConfig:
    d_in: int = 2
    d_out: int = 3
    d: int = 256
    d_F: int = 256
    L: int = 2
    sigma_levels: tuple = (128.0, 32.0)
    sigma_q: float = 16.0
    sta_heads: int = 2
    variant: str = "full"
    drop_linear_eq6: bool = False
    drop_linear_eq7: bool = False
    sta_projections: bool = True
    output_bias: bool = True
    ipc_sigma: float = 0.0  # 0 selects the first level bandwidth
    ipc_input: str = "frequency"
    num_tokens: int = 256  # R; sizes the IPC-style modulation
    freq_init_gain: float = 1.0  # scales the 1/sqrt(d_F) init std of frequency embeddings

    @property
    def bandwidths(self):
        return BandwidthSpec(self.sigma_q, tuple(self.sigma_levels), self.d_F, self.d_in)

    @property
    def ipc_bandwidth(self):
        return self.ipc_sigma if self.ipc_sigma else self.sigma_levels[0]

    @property
    def uses_sta(self):
        return self.variant in ("full", "no_multifm")

    @property
    def uses_multiband(self):
        return self.variant in ("full", "no_sta")

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown decoder variant {self.variant!r}; choose from {VARIANTS}",
                              field="decoder.variant")
        if self.ipc_input not in ("frequency", "raw"):
            raise ConfigError("decoder.ipc_input must be 'frequency' or 'raw'", field="decoder.ipc_input")
        for name in ("d_in", "d_out", "d", "d_F", "L", "sta_heads", "num_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"decoder.{name} must be positive", field=f"decoder.{name}")
        if len(self.sigma_levels) != self.L:
            raise ConfigError(f"{len(self.sigma_levels)} level bandwidths given for L={self.L}",
                              field="decoder.sigma_levels")
        if self.d % self.sta_heads:
            raise ConfigError(f"decoder.sta_heads={self.sta_heads} does not divide d={self.d}",
                              field="decoder.sta_heads")
        if self.freq_init_gain <= 0:
            raise ConfigError("decoder.freq_init_gain must be positive", field="decoder.freq_init_gain")
        if self.ipc_sigma and self.ipc_sigma <= 1:
            raise ConfigError("decoder.ipc_sigma must exceed 1", field="decoder.ipc_sigma")
        self.bandwidths.validate()
        return self


class FrequencyLayer(Module):
    """``ReLU(W gamma_sigma(v) + b)``; ``W`` may be a fixed matrix instead of a parameter."""

    def __init__(self, sigma, d_F, d, rng, trainable=True, init_gain=1.0):
        self.sigma = float(sigma)
        self.d_F = d_F
        if trainable:
            self.linear = Linear(d_F, d, rng, std=init_gain * INIT_GAIN / math.sqrt(d_F))
        else:
            self.linear = None
            self.fixed_weight = np.eye(d, d_F, dtype=T.get_default_dtype())
            self.bias = T.Parameter(np.zeros(d, dtype=T.get_default_dtype()))

    def embed(self, coords):
        return fourier_features(coords, self.sigma, self.d_F).astype(T.get_default_dtype())

    def forward(self, coords):
        gamma = T.Tensor(self.embed(coords))
        if self.linear is not None:
            return T.relu(self.linear(gamma))
        return T.relu(gamma @ self.fixed_weight.T.astype(gamma.dtype) + self.bias)


def _as_batched(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
    if coords.ndim != 3:
        raise ContractError(f"coordinates must have shape (M, d_in) or (B, M, d_in), got {coords.shape}")
    return coords


class LocalityAwareDecoder(Module):
    """Shared INR decoder ``F(v; Z)``.

    ``forward(coords, Z)`` takes coordinates (B, M, d_in) -- or (M, d_in)
    shared across the batch -- and latents (B, R, d), returning (B, M, d_out).
    """

    def __init__(self, config, rng):
        config.validate()
        self.config = c = config
        d = c.d
        mod_dim = d if c.uses_sta else c.num_tokens
        g = c.freq_init_gain

        if c.uses_sta:
            self.query = FrequencyLayer(c.sigma_q, c.d_F, d, rng, init_gain=g)
            self.sta = MultiHeadAttention(d, c.sta_heads, rng, project=c.sta_projections)
        else:
            if c.ipc_input == "frequency":
                self.ipc_embed = FrequencyLayer(c.ipc_bandwidth, c.d_F, d, rng, init_gain=g)
            else:
                self.ipc_embed = Linear(d, c.d_in, rng, bias=False)

        if c.uses_multiband:
            self.bands = [FrequencyLayer(s, c.d_F, d, rng, trainable=not c.drop_linear_eq6,
                                         init_gain=g)
                          for s in c.sigma_levels]
            self.mod_proj = []
            if not c.drop_linear_eq7:
                self.mod_proj = [Linear(mod_dim, d, rng) for _ in range(c.L)]
            self.hidden = [Linear(d, d, rng) for _ in range(c.L - 1)]
            self.heads = [Linear(d, c.d_out, rng, bias=c.output_bias) for _ in range(c.L)]
        else:
            if c.variant == "no_multifm":
                self.first = FrequencyLayer(c.sigma_levels[0], c.d_F, d, rng, init_gain=g)
                self.hidden = [Linear(d, d, rng) for _ in range(c.L - 1)]
            else:
                self.mod_bias = T.Parameter(np.zeros(mod_dim, dtype=T.get_default_dtype()))
                self.hidden = [Linear(mod_dim if i == 0 else d, d, rng) for i in range(c.L)]
            self.heads = [Linear(d, c.d_out, rng, bias=c.output_bias)]

    # ----------------------------------------------------------- components
    def query_features(self, coords):
        return self.query(_as_batched(coords))

    def selective_token_aggregation(self, q, Z, return_weights=False):
        """Cross-attention from the coordinate queries to the latent tokens."""
        Z = T.as_tensor(Z)
        if Z.ndim != 3 or Z.shape[1] == 0:
            raise ContractError(f"latent tokens must have shape (B, R, d) with R >= 1, got {Z.shape}")
        return self.sta(q, Z, return_weights=return_weights)

    def ipc_modulation(self, coords, Z):
        """Tokens as rows of a weight matrix: channel k is ``z_k . e(v) / sqrt(d)``."""
        coords = _as_batched(coords)
        Z = T.as_tensor(Z)
        if self.config.ipc_input == "frequency":
            emb = self.ipc_embed(coords)                       # (B|1, M, d)
            return T.scale(emb @ T.swapaxes(Z, -1, -2), 1.0 / math.sqrt(Z.shape[-1]))
        rows = self.ipc_embed(Z)                                # (B, R, d_in)
        return T.Tensor(coords.astype(rows.dtype)) @ T.swapaxes(rows, -1, -2)

    def band_features(self, coords, level):
        if not 1 <= level <= self.config.L:
            raise ContractError(f"level {level} outside 1..{self.config.L}")
        return self.bands[level - 1](_as_batched(coords))

    def band_modulation(self, m, level, coords, band=None):
        """``ReLU(h_F^(l)(v) + W_m^(l) m + b_m^(l))``."""
        if band is None:
            band = self.band_features(coords, level)
        if self.mod_proj:
            projected = self.mod_proj[level - 1](m)
        else:
            projected = m
            if m.shape[-1] != self.config.d:
                eye = np.eye(self.config.d, m.shape[-1], dtype=m.dtype)
                projected = m @ eye.T
        return T.relu(band + projected)

    def compose_and_predict(self, mods):
        """Coarse-to-fine composition of the level modulations.

        Returns the prediction and the hidden states of every level.
        """
        hiddens = [mods[0]]
        for level in range(1, len(mods)):
            pre = mods[level] + hiddens[-1]
            hiddens.append(T.relu(self.hidden[level - 1](pre)))
        y = self.heads[0](hiddens[0])
        for head, h in zip(self.heads[1:], hiddens[1:]):
            y = y + head(h)
        return y, hiddens

    def modulation(self, coords, Z):
        coords = _as_batched(coords)
        if self.config.uses_sta:
            return self.selective_token_aggregation(self.query_features(coords), Z)
        return self.ipc_modulation(coords, Z)

    def forward(self, coords, Z):
        c = self.config
        coords = _as_batched(coords)
        Z = T.as_tensor(Z)
        if Z.shape[-1] != c.d:
            raise ContractError(f"latent width {Z.shape[-1]} does not match decoder width {c.d}")
        if not c.uses_sta and Z.shape[1] != c.num_tokens:
            raise ContractError(f"decoder was built for {c.num_tokens} tokens, got {Z.shape[1]}")
        m = self.modulation(coords, Z)
        if c.uses_multiband:
            mods = [self.band_modulation(m, level, coords) for level in range(1, c.L + 1)]
            y, _ = self.compose_and_predict(mods)
            return y
        if c.variant == "no_multifm":
            # m shifts the first pre-activation of a plain ReLU stack
            h = T.relu(self.first.linear(T.Tensor(self.first.embed(coords))) + m)
        else:
            h = T.relu(m + self.mod_bias)
        for layer in self.hidden:
            h = T.relu(layer(h))
        return self.heads[0](h)

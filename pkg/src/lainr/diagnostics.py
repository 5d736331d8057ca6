"""Which region of the output does each latent token control?

Zeroing one latent token and measuring how much the decoded signal moves
gives a per-coordinate difference map for that token.  Locality-aware
latents produce maps concentrated in a small region; globally acting
latents spread their influence over the whole grid.
"""

import numpy as np

from . import tensor as T
from .errors import ContractError
from .model import predict


def token_ablation_maps(model, instance, tokens=None, Z=None):
    """Per-coordinate ``|F(v; Z) - F(v; Z with z_k = 0)|`` summed over channels.

    Returns an array (K, *instance.grid_shape), one map per requested token.
    """
    if Z is None:
        with T.no_grad():
            Z = model.encode(model.tokens([instance])).data
    Z = np.asarray(Z.data if isinstance(Z, T.Tensor) else Z)
    R = Z.shape[1]
    tokens = range(R) if tokens is None else list(tokens)
    for k in tokens:
        if not 0 <= k < R:
            raise ContractError(f"token index {k} outside 0..{R - 1}")
    base = predict(model, [instance], Z=Z)[0]
    maps = []
    for k in tokens:
        ablated = Z.copy()
        ablated[:, k] = 0.0
        out = predict(model, [instance], Z=ablated)[0]
        maps.append(np.abs(base - out).sum(axis=-1).reshape(instance.grid_shape))
    return np.stack(maps)


def rescale_map(diff):
    """Scale a difference map to a maximum of 1 (all-zero maps stay zero)."""
    peak = diff.max()
    return diff / peak if peak > 0 else np.zeros_like(diff)


def concentration(diff, top_fraction=0.1):
    """Share of the total difference mass held by the top ``top_fraction`` of
    coordinates; 0 for an all-zero map."""
    flat = np.sort(np.ravel(diff))[::-1]
    total = flat.sum()
    if total <= 0:
        return 0.0
    k = max(1, int(round(top_fraction * flat.size)))
    return float(flat[:k].sum() / total)


def token_concentrations(model, instances, top_fraction=0.1):
    """Mean concentration of every token's ablation map over ``instances``."""
    per_instance = [[concentration(m, top_fraction) for m in token_ablation_maps(model, inst)]
                    for inst in instances]
    return np.mean(per_instance, axis=0)


def attention_mass(model, coords, Z):
    """Total attention each latent token receives over ``coords``, per head.

    Only defined for decoders that aggregate tokens by cross-attention.
    Returns (B, heads, R).
    """
    dec = model.decoder
    if not dec.config.uses_sta:
        raise ContractError(f"variant {dec.config.variant!r} has no cross-attention")
    with T.no_grad():
        _, weights = dec.selective_token_aggregation(dec.query_features(coords), T.as_tensor(Z),
                                                     return_weights=True)
    return weights.data.sum(axis=-2)

"""Encoder/decoder pair forming a generalizable INR."""

import dataclasses

import numpy as np

from . import tensor as T
from .coords import ray_bundle
from .decoder import DecoderConfig, LocalityAwareDecoder
from .encoder import EncoderConfig, LatentEncoder, patchify
from .nn import Module


class INRNetwork(Module):
    """Transformer encoder producing latent tokens plus the shared decoder.

    ``patch_dim`` and ``num_data_tokens`` fix the tokenization the network
    accepts; :meth:`for_instance` derives both from an example instance.
    """

    def __init__(self, encoder_config, decoder_config, patch_dim, num_data_tokens, seed=0):
        decoder_config = dataclasses.replace(decoder_config, num_tokens=encoder_config.R)
        rng = np.random.default_rng(seed)
        self.encoder_config = encoder_config
        self.decoder_config = decoder_config
        self.seed = seed
        self.encoder = LatentEncoder(patch_dim, num_data_tokens, decoder_config.d, encoder_config, rng)
        self.decoder = LocalityAwareDecoder(decoder_config, rng)

    @classmethod
    def for_instance(cls, instance, encoder_config, decoder_config, seed=0):
        tokens = patchify(instance.array, encoder_config.patch_size)
        decoder_config = dataclasses.replace(
            decoder_config, d_in=instance.coords.shape[-1], d_out=instance.targets.shape[-1])
        return cls(encoder_config, decoder_config, tokens.shape[1], tokens.shape[0], seed=seed)

    @property
    def patch_size(self):
        return self.encoder_config.patch_size

    def describe(self):
        """JSON-serializable constructor arguments."""
        return {
            "encoder": dataclasses.asdict(self.encoder_config),
            "decoder": dataclasses.asdict(self.decoder_config),
            "patch_dim": self.encoder.patch_dim,
            "num_data_tokens": self.encoder.num_data_tokens,
            "seed": self.seed,
        }

    @classmethod
    def from_description(cls, desc):
        dec = dict(desc["decoder"])
        dec["sigma_levels"] = tuple(dec["sigma_levels"])
        return cls(EncoderConfig(**desc["encoder"]), DecoderConfig(**dec),
                   desc["patch_dim"], desc["num_data_tokens"], seed=desc["seed"])

    def tokens(self, instances):
        """Patch tokens (B, N, patch_dim) for a list of instances."""
        return np.stack([patchify(inst.array, self.patch_size) for inst in instances])

    def encode(self, tokens):
        return self.encoder(tokens)

    def decode(self, coords, Z):
        return self.decoder(coords, Z)

    def forward(self, tokens, coords):
        return self.decode(coords, self.encode(tokens))


def predict(model, instances, Z=None, chunk=8192, batch_size=16):
    """Full-grid predictions for each instance, without building a graph.

    Returns a list of (M, d_out) arrays; ``Z`` optionally overrides the
    encoded latents (shape (len(instances), R, d)).
    """
    if Z is not None:
        Z = Z.data if isinstance(Z, T.Tensor) else np.asarray(Z)
    outputs = []
    with T.no_grad():
        for start in range(0, len(instances), batch_size):
            group = instances[start:start + batch_size]
            if Z is None:
                z = model.encode(model.tokens(group))
            else:
                z = T.Tensor(Z[start:start + batch_size])
            shared = all(inst.coords is group[0].coords for inst in group)
            m = group[0].num_coords
            preds = np.empty((len(group), m, model.decoder_config.d_out), dtype=np.float64)
            for lo in range(0, m, chunk):
                if shared:
                    coords = group[0].coords[lo:lo + chunk]
                else:
                    coords = np.stack([inst.coords[lo:lo + chunk] for inst in group])
                preds[:, lo:lo + chunk] = model.decode(coords, z).data
            outputs.extend(preds)
    return outputs


def render_novel_view(model, scene, pose, height=None, width=None, chunk=8192):
    """Decode the rays of camera ``pose`` against the latents of ``scene``.

    Intrinsics are rescaled from the scene's view size to (height, width).
    Returns an (H, W, C) array, unclipped.
    """
    _, h, w = scene.grid_shape
    height = height or h
    width = width or w
    fx, fy, cx, cy = scene.extras["intrinsics"]
    intr = (fx * width / w, fy * height / h, cx * width / w, cy * height / h)
    rays = ray_bundle(pose, intr, height, width)
    with T.no_grad():
        Z = model.encode(model.tokens([scene]))
        out = np.concatenate([model.decode(rays[lo:lo + chunk], Z).data[0]
                              for lo in range(0, len(rays), chunk)])
    return out.reshape(height, width, -1)

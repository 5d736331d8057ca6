"""Self-describing binary container for checkpoints and latent archives.

Layout (all integers little-endian)::

    magic     8 bytes   b"LAINRCKP" or b"LAINRLAT"
    version   uint32
    hlen      uint64    length of the JSON header
    header    hlen bytes, UTF-8 JSON: {"meta": {...}, "arrays": [...]}
    payload   raw little-endian array bytes, back to back

Each ``arrays`` entry records ``name``, ``dtype``, ``shape``, ``offset`` and
``nbytes`` relative to the start of the payload.
"""

import json
import os
import struct

import numpy as np

from .errors import FormatError
from .model import INRNetwork

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"LAINRCKP"
LATENT_MAGIC = b"LAINRLAT"
_PREFIX = struct.Struct("<8sIQ")


def write_container(path, magic, meta, arrays):
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(magic, FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_container(path, magic):
    """Return ``(meta, arrays)``; rejects foreign files and future versions."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short to be a container")
    got_magic, version, hlen = _PREFIX.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got_magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version} (this build reads {FORMAT_VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    payload = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = payload + e["offset"]
        if lo + e["nbytes"] > len(raw):
            raise FormatError(f"{path}: array {e['name']} is truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=lo)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    return header["meta"], arrays


# -------------------------------------------------------------- checkpoints
def save_checkpoint(path, model, trainer=None, run_config=None):
    """Write model parameters, and optionally trainer state and run config."""
    meta = {"model": model.describe(), "run_config": run_config}
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    if trainer is not None:
        state = trainer.state_dict()
        opt = state["optimizer"]
        meta["trainer"] = {"step": state["step"], "rng": state["rng"], "loss_trace": state["loss_trace"],
                           "optimizer_step": opt["step"]}
        arrays.update({f"optim/{k}": v for k, v in opt.items() if k != "step"})
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(path):
    """Return ``(model, meta, arrays)`` with parameters restored."""
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    model = INRNetwork.from_description(meta["model"])
    model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    return model, meta, arrays


def restore_trainer(trainer, meta, arrays):
    """Load optimizer, RNG and step counter saved by :func:`save_checkpoint`."""
    info = meta.get("trainer")
    if info is None:
        raise FormatError("checkpoint carries no trainer state")
    opt = {k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")}
    opt["step"] = info["optimizer_step"]
    trainer.load_state_dict({
        "params": {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")},
        "optimizer": opt,
        "rng": info["rng"],
        "step": info["step"],
        "loss_trace": info["loss_trace"],
    })


# ---------------------------------------------------------- latent archives
def standardize(latents, mean, std):
    return (latents - mean) / std


def destandardize(latents, mean, std):
    return latents * std + mean


def latent_statistics(latents):
    """Per-token, per-channel mean and std over instances (float64).

    Channels with zero spread get std 1 so standardization stays finite.
    """
    latents = np.asarray(latents, dtype=np.float64)
    mean = latents.mean(axis=0)
    std = latents.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def save_latent_archive(path, latents, ids, labels=None, mean=None, std=None):
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3 or len(latents) == 0:
        raise FormatError(f"latents must be a non-empty (N, R, d) array, got shape {latents.shape}")
    if mean is None or std is None:
        mean, std = latent_statistics(latents)
    arrays = {"latents": latents, "standardized": standardize(latents, mean, std), "mean": mean, "std": std}
    if labels is not None:
        arrays["labels"] = np.asarray(labels, dtype=np.int64)
    write_container(path, LATENT_MAGIC, {"ids": list(ids)}, arrays)


def load_latent_archive(path):
    meta, arrays = read_container(path, LATENT_MAGIC)
    arrays["ids"] = meta["ids"]
    return arrays

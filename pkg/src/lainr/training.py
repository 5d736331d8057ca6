"""Optimization of the shared decoder and encoder over a dataset."""

import copy
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, TrainingDiverged
from .model import predict
from .optim import Adam

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
# Coordinate subsampling switches on automatically from this many coordinates.
AUTO_SUBSAMPLE_MIN_COORDS = 256 * 256


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 1000
    coord_fraction: float = 0.1
    subsample: str = "auto"
    seed: int = 0
    lr: float = 1e-4
    eval_interval: int = 100
    holdout_fraction: float = 0.1

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be positive", field="train.batch_size")
        if self.steps < 0:
            raise ConfigError("train.steps must be non-negative", field="train.steps")
        if not 0 < self.coord_fraction <= 1:
            raise ConfigError("train.coord_fraction must lie in (0, 1]", field="train.coord_fraction")
        if self.subsample not in ("auto", "on", "off"):
            raise ConfigError("train.subsample must be auto, on or off", field="train.subsample")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive", field="train.lr")
        if self.eval_interval < 1:
            raise ConfigError("train.eval_interval must be positive", field="train.eval_interval")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("train.holdout_fraction must lie in [0, 1)", field="train.holdout_fraction")
        return self


@dataclass
class MetricRecord:
    step: int
    loss: float
    psnr: float
    seconds: float

    def line(self):
        return f"{self.step}, {self.loss:.9g}, {self.psnr:.6f}, {self.seconds:.3f}"


# ----------------------------------------------------------------- metrics
def reconstruction_loss(preds, targets):
    """Squared L2 error summed over output channels, averaged over
    coordinates and instances.

    ``preds`` is a tensor (B, M, C) or (M, C); ``targets`` matches it.
    """
    preds = T.as_tensor(preds)
    if preds.size == 0:
        raise ContractError("reconstruction loss of an empty batch")
    count = int(np.prod(preds.shape[:-1])) if preds.ndim > 1 else preds.shape[0]
    return T.scale(T.squared_error_sum(preds, targets), 1.0 / count)


def mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def psnr_from_mse(value):
    if value < 0:
        raise ContractError("MSE cannot be negative")
    if value == 0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(value))


def mse_from_psnr(db):
    return 10.0 ** (-db / 10.0)


def psnr(pred, target):
    """PSNR in dB of signals in [0, 1]; identical inputs give ``PSNR_CAP``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    for name, arr in (("prediction", pred), ("target", target)):
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ContractError(f"{name} values must lie in [0, 1] for PSNR")
    return psnr_from_mse(mse(pred, target))


def subsample_coords(num_coords, fraction, rng):
    """Indices of a uniform sample without replacement, sorted ascending."""
    if not 0 < fraction <= 1:
        raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
    k = max(1, int(round(fraction * num_coords)))
    if k >= num_coords:
        return np.arange(num_coords)
    return np.sort(rng.choice(num_coords, size=k, replace=False))


def split_dataset(dataset, holdout_fraction):
    """Last ``floor(fraction * N)`` instances form the held-out split.

    When that split is empty, evaluation falls back to the training set.
    """
    n_hold = int(math.floor(holdout_fraction * len(dataset)))
    if n_hold == 0 or n_hold >= len(dataset):
        return list(dataset), list(dataset)
    return list(dataset[:-n_hold]), list(dataset[-n_hold:])


def evaluate_psnr(model, instances, Z=None):
    """Mean per-instance PSNR of clipped full-grid predictions."""
    preds = predict(model, instances, Z=Z)
    return float(np.mean([psnr(np.clip(p, 0, 1), inst.targets) for p, inst in zip(preds, instances)]))


def _batch_coords(batch, fraction, rng):
    """Coordinates (1|B, m, d_in) and targets (B, m, C) for one step."""
    if fraction >= 1:
        if all(inst.coords is batch[0].coords for inst in batch):
            coords = batch[0].coords
        else:
            coords = np.stack([inst.coords for inst in batch])
        return coords, np.stack([inst.targets for inst in batch])
    idx = [subsample_coords(inst.num_coords, fraction, rng) for inst in batch]
    coords = np.stack([inst.coords[i] for inst, i in zip(batch, idx)])
    return coords, np.stack([inst.targets[i] for inst, i in zip(batch, idx)])


def _grad_norms(named_params):
    return {name: (float(np.linalg.norm(p.grad)) if p.grad is not None else None)
            for name, p in named_params}


class Trainer:
    """Owns the model parameters, the optimizer and the sampling state.

    Mini-batches follow an epoch-wise permutation derived from
    ``(seed, epoch)``; coordinate subsampling draws from a generator whose
    state is part of :meth:`state_dict`, so a restored trainer continues the
    exact same loss trace.
    """

    def __init__(self, model, dataset, config):
        if not dataset:
            raise ContractError("cannot train on an empty dataset")
        self.model = model
        self.config = config.validate()
        self.train_set, self.eval_set = split_dataset(dataset, config.holdout_fraction)
        self.optimizer = Adam(model.parameters(), lr=config.lr)
        self.named_params = list(model.named_parameters())
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.loss_trace = []
        self._tokens = model.tokens(self.train_set)
        m = self.train_set[0].num_coords
        if config.subsample == "on" or (config.subsample == "auto" and m >= AUTO_SUBSAMPLE_MIN_COORDS):
            self.fraction = config.coord_fraction
        else:
            self.fraction = 1.0

    @property
    def batches_per_epoch(self):
        return -(-len(self.train_set) // self.config.batch_size)

    def batch_indices(self, step):
        epoch, pos = divmod(step, self.batches_per_epoch)
        order = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.train_set))
        b = self.config.batch_size
        return order[pos * b:(pos + 1) * b]

    def train_step(self):
        idx = self.batch_indices(self.step)
        batch = [self.train_set[i] for i in idx]
        coords, targets = _batch_coords(batch, self.fraction, self.rng)
        Z = self.model.encode(self._tokens[idx])
        loss = reconstruction_loss(self.model.decode(coords, Z), targets)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss {value} at step {self.step} (lr={self.config.lr})")
        loss.backward()
        norms = _grad_norms(self.named_params)
        if not all(n is None or math.isfinite(n) for n in norms.values()):
            bad = {k: v for k, v in norms.items() if v is None or not math.isfinite(v)}
            raise TrainingDiverged(
                f"non-finite gradients at step {self.step} (lr={self.config.lr}): {bad}")
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.step += 1
        self.loss_trace.append(value)
        return value

    def evaluate(self):
        return evaluate_psnr(self.model, self.eval_set)

    def run(self, steps=None, log_path=None, on_eval=None):
        """Train for ``steps`` more steps, evaluating every ``eval_interval``.

        Returns the metric records emitted at evaluation points (always
        including the final step).
        """
        steps = self.config.steps if steps is None else steps
        records = []
        start = time.perf_counter()
        log = open(log_path, "a") if log_path else None
        try:
            end = self.step + steps
            while self.step < end:
                loss = self.train_step()
                if self.step % self.config.eval_interval == 0 or self.step == end:
                    rec = MetricRecord(self.step, loss, self.evaluate(), time.perf_counter() - start)
                    records.append(rec)
                    logger.info("step %d loss %.6g psnr %.3f", rec.step, rec.loss, rec.psnr)
                    if log:
                        log.write(rec.line() + "\n")
                        log.flush()
                    if on_eval:
                        on_eval(self, rec)
        finally:
            if log:
                log.close()
        return records

    def state_dict(self):
        """Everything needed to resume: parameters, optimizer, RNG, step."""
        return {
            "params": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "rng": self.rng.bit_generator.state,
            "step": self.step,
            "loss_trace": list(self.loss_trace),
        }

    def load_state_dict(self, state):
        self.model.load_state_dict(state["params"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.rng.bit_generator.state = state["rng"]
        self.step = int(state["step"])
        self.loss_trace = list(state["loss_trace"])


def train_loop(dataset, model, config, log_path=None):
    """Train ``model`` in place; returns ``(trainer, metric records)``."""
    trainer = Trainer(model, dataset, config)
    records = trainer.run(log_path=log_path)
    return trainer, records


# --------------------------------------------------- test-time optimization
def _freeze(model):
    flags = [(p, p.requires_grad) for p in model.parameters()]
    for p, _ in flags:
        p.requires_grad = False
    return flags


def _restore(flags):
    for p, flag in flags:
        p.requires_grad = flag


def _tto(model, instance, steps, lr, train_decoder):
    tokens = model.tokens([instance])
    with T.no_grad():
        z0 = model.encode(tokens).data.copy()
    Z = T.Parameter(z0, name="latents")
    params = [Z] + (model.decoder.parameters() if train_decoder else [])
    flags = _freeze(model.encoder)
    if not train_decoder:
        flags += _freeze(model.decoder)
    try:
        opt = Adam(params, lr=lr)
        coords, targets = instance.coords, instance.targets[None]
        trace, losses = [evaluate_psnr(model, [instance], Z=Z)], []
        for _ in range(steps):
            loss = reconstruction_loss(model.decode(coords, Z), targets)
            losses.append(float(loss.data))
            loss.backward()
            opt.step()
            opt.zero_grad()
            trace.append(evaluate_psnr(model, [instance], Z=Z))
        with T.no_grad():
            final = reconstruction_loss(model.decode(coords, Z), targets)
        losses.append(float(final.data))
    finally:
        _restore(flags)
    return Z.detach(), trace, losses


def tto_latents(model, instance, steps, lr=1e-4):
    """Refine only the latent tokens of one instance with Adam.

    Returns ``(Z, psnr_trace, loss_trace)``; both traces have ``steps + 1``
    entries, the first being the feed-forward prediction.  The model's
    parameters are left untouched.
    """
    return _tto(model, instance, steps, lr, train_decoder=False)


def tto_full(model, instance, steps, lr=1e-4):
    """Fine-tune the latents and a private copy of the whole decoder.

    Returns ``(finetuned_model, Z, psnr_trace, loss_trace)``; ``model`` is
    not modified.
    """
    tuned = copy.deepcopy(model)
    Z, trace, losses = _tto(tuned, instance, steps, lr, train_decoder=True)
    return tuned, Z, trace, losses

"""scikit-learn style wrapper around the encoder/decoder network."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .data import images_to_instances
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ContractError
from .model import INRNetwork, predict
from .training import TrainConfig, Trainer, evaluate_psnr


def check_images(X, channels=None, size=None):
    """Validate an image stack to float32 (N, H, W, C) in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise ContractError(f"expected images of shape (N, H, W[, C]), got {X.shape}")
    if len(X) == 0:
        raise ContractError("expected at least one image")
    if not np.isfinite(X).all():
        raise ContractError("images contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ContractError(f"pixel values must lie in [0, 1], got [{X.min():.4g}, {X.max():.4g}]")
    if channels is not None and X.shape[-1] != channels:
        raise ContractError(f"expected {channels} channels, got {X.shape[-1]}")
    if size is not None and X.shape[1:3] != tuple(size):
        raise ContractError(f"expected {size[0]}x{size[1]} images, got {X.shape[1]}x{X.shape[2]}")
    return X


class LocalityAwareINR(TransformerMixin, BaseEstimator):
    """Generalizable implicit representation for equally sized images.

    ``fit`` trains the encoder and decoder jointly, ``transform`` returns
    latent tokens (N, R, d), ``inverse_transform`` decodes latents back to
    images and ``predict`` reconstructs images end to end.  ``score`` is the
    mean per-image PSNR in dB.
    """

    def __init__(self, patch_size=8, R=16, num_blocks=2, num_heads=4, head_dim=16, d=64, d_F=64,
                 L=2, sigma_levels=(32.0, 8.0), sigma_q=4.0, sta_heads=2, variant="full",
                 steps=1000, batch_size=16, lr=1e-4, coord_fraction=0.1, subsample="auto",
                 random_state=0):
        self.patch_size = patch_size
        self.R = R
        self.num_blocks = num_blocks
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.d = d
        self.d_F = d_F
        self.L = L
        self.sigma_levels = sigma_levels
        self.sigma_q = sigma_q
        self.sta_heads = sta_heads
        self.variant = variant
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.coord_fraction = coord_fraction
        self.subsample = subsample
        self.random_state = random_state

    def _configs(self):
        enc = EncoderConfig(num_blocks=self.num_blocks, num_heads=self.num_heads,
                            head_dim=self.head_dim, R=self.R, patch_size=self.patch_size)
        dec = DecoderConfig(d=self.d, d_F=self.d_F, L=self.L, sigma_levels=tuple(self.sigma_levels),
                            sigma_q=self.sigma_q, sta_heads=self.sta_heads, variant=self.variant)
        train = TrainConfig(batch_size=self.batch_size, steps=self.steps, lr=self.lr,
                            coord_fraction=self.coord_fraction, subsample=self.subsample,
                            seed=self.random_state, eval_interval=max(1, self.steps),
                            holdout_fraction=0.0)
        enc.validate()
        dec.validate()
        train.validate()
        return enc, dec, train

    def fit(self, X, y=None):
        X = check_images(X)
        enc, dec, train = self._configs()
        data = images_to_instances(X)
        self.model_ = INRNetwork.for_instance(data[0], enc, dec, seed=self.random_state)
        self.trainer_ = Trainer(self.model_, data, train)
        self.trainer_.run()
        self.loss_curve_ = list(self.trainer_.loss_trace)
        self.image_shape_ = X.shape[1:]
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _instances(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X, channels=self.image_shape_[-1], size=self.image_shape_[:2])
        return X, images_to_instances(X)

    def transform(self, X):
        _, data = self._instances(X)
        with T.no_grad():
            return np.concatenate([self.model_.encode(self.model_.tokens(data[i:i + 16])).data
                                   for i in range(0, len(data), 16)])

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        Z = np.asarray(Z, dtype=np.float32)
        blank = images_to_instances(np.zeros((len(Z), *self.image_shape_), dtype=np.float32))
        preds = predict(self.model_, blank, Z=Z)
        return np.clip(np.stack([inst.as_image(p) for inst, p in zip(blank, preds)]), 0.0, 1.0)

    def predict(self, X):
        _, data = self._instances(X)
        preds = predict(self.model_, data)
        return np.clip(np.stack([inst.as_image(p) for inst, p in zip(data, preds)]), 0.0, 1.0)

    def score(self, X, y=None):
        _, data = self._instances(X)
        return evaluate_psnr(self.model_, data)

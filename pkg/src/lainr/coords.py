"""Coordinate grids, camera rays and sinusoidal frequency embeddings."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError

# Pixel centres are mapped affinely onto this interval, per axis.
COORD_RANGE = (-1.0, 1.0)


def grid_coords(height, width, coord_range=COORD_RANGE):
    """Pixel-centre coordinates of an ``height x width`` grid, row-major.

    Returns an array of shape (height * width, 2) holding ``(y, x)`` pairs.
    With the default range a 1x1 grid maps to the origin.
    """
    if height < 1 or width < 1:
        raise ContractError(f"grid dimensions must be positive, got {height}x{width}")
    lo, hi = coord_range
    # (2i + 1 - n) / n keeps the grid exactly antisymmetric about zero.
    ys = (2.0 * np.arange(height) + 1.0 - height) / height
    xs = (2.0 * np.arange(width) + 1.0 - width) / width
    if (lo, hi) != (-1.0, 1.0):
        ys = lo + (ys + 1.0) * 0.5 * (hi - lo)
        xs = lo + (xs + 1.0) * 0.5 * (hi - lo)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=-1)


def frequency_ladder(sigma, n):
    """``n`` frequencies spaced evenly on a log scale from 1 to ``sigma``."""
    if n < 2:
        raise ConfigError(f"need at least two frequencies per axis, got {n}")
    freqs = sigma ** (np.arange(n) / (n - 1))
    freqs[0], freqs[-1] = 1.0, float(sigma)
    return freqs


def num_frequencies(d_in, d_F):
    if d_F % (2 * d_in):
        raise ConfigError(f"frequency width {d_F} is not divisible by 2 * d_in = {2 * d_in}", field="d_F")
    return d_F // (2 * d_in)


def fourier_features(v, sigma, d_F):
    """Sinusoidal embedding of coordinates ``v`` (shape (..., d_in)).

    The output (..., d_F) lists, for every input axis in turn and every
    frequency in the ladder, the pair ``cos(pi w v_i), sin(pi w v_i)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        v = v[None]
    if sigma <= 1:
        raise ConfigError(f"bandwidth must exceed 1, got {sigma}", field="sigma")
    d_in = v.shape[-1]
    freqs = frequency_ladder(sigma, num_frequencies(d_in, d_F))
    angles = np.pi * v[..., :, None] * freqs          # (..., d_in, n)
    pairs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)  # (..., d_in, n, 2)
    return pairs.reshape(*v.shape[:-1], d_F)


def frequency_features(v, sigma, weight, bias):
    """``ReLU(W gamma_sigma(v) + b)`` for ``W`` of shape (d, d_F)."""
    weight, bias = T.as_tensor(weight), T.as_tensor(bias)
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise ShapeError(f"weight {weight.shape} and bias {bias.shape} do not form an affine map")
    gamma = fourier_features(v, sigma, weight.shape[1]).astype(weight.dtype)
    lead = gamma.shape[:-1]
    flat = gamma.reshape(-1, weight.shape[1])
    out = T.relu(T.as_tensor(flat) @ weight.T + bias)
    return out.reshape(*lead, weight.shape[0])


@dataclass
class BandwidthSpec:
    sigma_q: float
    sigma_levels: tuple
    d_F: int
    d_in: int = 2

    def validate(self):
        sigmas = (self.sigma_q, *self.sigma_levels)
        if not self.sigma_levels:
            raise ConfigError("at least one level bandwidth is required", field="sigma_levels")
        for s in sigmas:
            if not s > 1:
                raise ConfigError(f"bandwidths must exceed 1, got {s}", field="sigma_levels")
        if num_frequencies(self.d_in, self.d_F) < 2:
            raise ConfigError(f"d_F={self.d_F} gives fewer than two frequencies per axis", field="d_F")
        ordered = all(a >= b for a, b in zip(sigmas[1:], sigmas[2:])) and self.sigma_levels[-1] >= self.sigma_q
        if not ordered:
            warnings.warn(
                f"bandwidths {tuple(self.sigma_levels)} with query {self.sigma_q} are not in "
                "decreasing order; coarse-to-fine decoding usually works best with "
                "sigma_1 >= ... >= sigma_L >= sigma_q",
                stacklevel=2,
            )
        return self


# --------------------------------------------------------------------- rays
def plucker_ray(origin, direction):
    """Six-dimensional Plücker coordinates ``(d, o x d)`` of a ray.

    The direction is normalized first, so the result does not depend on the
    direction's length or on where along the ray the origin sits.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ContractError("ray direction must be nonzero")
    unit = direction / norm
    moment = np.cross(np.broadcast_to(origin, unit.shape), unit)
    return np.concatenate([unit, moment], axis=-1)


def check_pose(pose, atol=1e-5):
    """Validate a 3x4 camera-to-world matrix and return it as float64."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape == (4, 4):
        pose = pose[:3]
    if pose.shape != (3, 4):
        raise ContractError(f"camera pose must be 3x4 or 4x4, got {pose.shape}")
    rot = pose[:, :3]
    if not np.all(np.isfinite(pose)):
        raise ContractError("camera pose contains non-finite values")
    if not np.allclose(rot.T @ rot, np.eye(3), atol=atol) or np.linalg.det(rot) <= 0:
        raise ContractError("camera rotation is not a proper orthonormal matrix")
    return pose


def ray_bundle(pose, intrinsics, height, width):
    """Plücker coordinates for every pixel centre of a pinhole camera.

    ``pose`` maps camera to world coordinates; the camera looks along its
    +z axis with x to the right and y down.  ``intrinsics`` is
    ``(fx, fy, cx, cy)`` in pixels.  Returns (height * width, 6), row-major.
    """
    pose = check_pose(pose)
    fx, fy, cx, cy = (float(c) for c in intrinsics)
    if fx <= 0 or fy <= 0:
        raise ContractError("focal lengths must be positive")
    if height < 1 or width < 1:
        raise ContractError(f"image dimensions must be positive, got {height}x{width}")
    u, v = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5, indexing="xy")
    cam = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    world = cam @ pose[:, :3].T
    return plucker_ray(pose[:, 3], world)

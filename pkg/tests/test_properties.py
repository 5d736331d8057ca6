import dataclasses
import os
import tempfile

import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lainr import tensor as T
from lainr.config import format_config, parse_config
from lainr.coords import fourier_features, frequency_ladder, grid_coords, plucker_ray
from lainr.decoder import DecoderConfig, LocalityAwareDecoder
from lainr.encoder import patchify, unpatchify
from lainr.io import LATENT_MAGIC, destandardize, latent_statistics, read_container, standardize, write_container
from lainr.training import mse_from_psnr, psnr_from_mse, subsample_coords

finite = st.floats(-10, 10, allow_nan=False, width=64)


@given(st.floats(1.01, 512.0), st.integers(2, 64))
def test_ladder_is_log_uniform(sigma, n):
    w = frequency_ladder(sigma, n)
    assert w[0] == 1.0 and w[-1] == sigma
    ratios = w[1:] / w[:-1]
    assert np.abs(ratios - ratios[0]).max() < 1e-9


@given(arrays(np.float64, (5, 3), elements=finite), st.floats(1.5, 300.0), st.integers(2, 6))
def test_fourier_range(v, sigma, n):
    f = fourier_features(v, sigma, 2 * 3 * n)
    assert f.shape == (5, 6 * n)
    assert np.abs(f).max() <= 1.0


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite),
       st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
def test_plucker_invariances(origin, direction, scale, slide):
    if np.linalg.norm(direction) < 1e-3:
        return
    base = plucker_ray(origin, direction)
    unit = direction / np.linalg.norm(direction)
    np.testing.assert_allclose(plucker_ray(origin, scale * direction), base, atol=1e-6)
    np.testing.assert_allclose(plucker_ray(origin + slide * unit, direction), base, atol=1e-6)
    assert abs(base[:3] @ base[3:]) < 1e-6


@given(st.integers(1, 40), st.integers(1, 40))
def test_grid_symmetry(h, w):
    g = grid_coords(h, w).reshape(h, w, 2)
    np.testing.assert_array_equal(g[::-1, :, 0], -g[:, :, 0])
    assert np.abs(g).max() < 1.0 or (h, w) == (1, 1)


@given(arrays(np.float64, (3, 6), elements=st.floats(-500, 500, allow_nan=False)), st.integers(0, 1))
def test_softmax_simplex(x, axis):
    s = T.softmax(T.Tensor(x), axis=axis).data
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)


_decoders = {}


def _decoder(variant):
    if variant not in _decoders:
        cfg = DecoderConfig(d=8, d_F=8, L=2, sigma_levels=(8.0, 4.0), sigma_q=2.0, sta_heads=2,
                            variant=variant, num_tokens=5)
        _decoders[variant] = LocalityAwareDecoder(cfg, np.random.default_rng(0))
    return _decoders[variant]


@given(st.integers(0, 2**32 - 1))
def test_decode_invariant_to_token_permutation(seed):
    rng = np.random.default_rng(seed)
    dec = _decoder("full")
    Z = rng.normal(size=(1, 5, 8)).astype(np.float32)
    v = rng.uniform(-1, 1, size=(7, 2))
    with T.no_grad():
        a = dec(v, Z).data
        b = dec(v, Z[:, rng.permutation(5)]).data
    np.testing.assert_allclose(a, b, atol=1e-5)


@given(st.integers(0, 2**32 - 1))
def test_modulations_and_hiddens_nonnegative(seed):
    rng = np.random.default_rng(seed)
    dec = _decoder("full")
    v = rng.uniform(-1, 1, size=(6, 2))
    with T.no_grad():
        m = dec.modulation(v, rng.normal(size=(1, 5, 8)))
        mods = [dec.band_modulation(m, level, v) for level in (1, 2)]
        _, hiddens = dec.compose_and_predict(mods)
    assert all((x.data >= 0).all() for x in mods + hiddens)


@given(st.integers(1, 13), st.integers(1, 13), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_patchify_round_trip(h, w, c, p, views):
    if p > h or p > w:
        return
    rng = np.random.default_rng(h * 100 + w)
    arr = rng.normal(size=(views, h, w, c))
    tokens = patchify(arr, p)
    assert tokens.shape == (views * (-(-h // p)) * (-(-w // p)), p * p * c)
    np.testing.assert_array_equal(unpatchify(tokens, p, h, w, c, views=views), arr)


@given(arrays(np.float64, (6, 2, 3), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardization_inverse(z):
    mean, std = latent_statistics(z)
    np.testing.assert_allclose(destandardize(standardize(z, mean, std), mean, std), z, atol=1e-6)


@given(st.floats(0.0, 98.0))
def test_psnr_bijection(db):
    assert abs(psnr_from_mse(mse_from_psnr(db)) - db) < 1e-9


@given(st.integers(1, 5000), st.floats(0.001, 1.0), st.integers(0, 100))
def test_subsample_size(m, fraction, seed):
    idx = subsample_coords(m, fraction, np.random.default_rng(seed))
    assert len(idx) == min(m, max(1, round(fraction * m)))
    assert len(np.unique(idx)) == len(idx) and idx.min() >= 0 and idx.max() < m


@given(st.sampled_from([np.float32, np.float64, np.int32, np.uint8]),
       st.lists(st.integers(0, 4), min_size=0, max_size=3))
def test_container_round_trip(dtype, shape):
    arr = (np.arange(int(np.prod(shape)) if shape else 1) * 3).astype(dtype).reshape(shape)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "c")
        write_container(path, LATENT_MAGIC, {"s": shape}, {"a": arr})
        meta, back = read_container(path, LATENT_MAGIC)
    assert back["a"].dtype == arr.dtype and back["a"].tobytes() == arr.tobytes()
    assert meta["s"] == shape


@given(st.integers(1, 64), st.integers(1, 10_000), st.sampled_from(["full", "no_sta", "no_multifm", "ipc_baseline"]),
       st.booleans(), st.floats(1e-6, 1.0))
def test_config_text_round_trip(R, steps, variant, flag, lr):
    text = (f"kind = image\ndataset = d\nencoder.R = {R}\ntrain.steps = {steps}\ntrain.lr = {lr!r}\n"
            f"decoder.variant = {variant}\ndecoder.drop_linear_eq7 = {flag}\ndecoder.sigma_q = 4\n")
    cfg = parse_config(text)
    again = parse_config(format_config(cfg))
    assert dataclasses.asdict(again) == dataclasses.asdict(cfg)

import os

# bit-identical determinism checks assume single-threaded BLAS
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest
from hypothesis import settings

from lainr import tensor as T

settings.register_profile("lainr", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("lainr")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def numeric_grad(fn, params, eps=1e-4):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``params``."""
    grads = []
    with T.no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            it = np.nditer(p.data, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p.data[idx]
                p.data[idx] = orig + eps
                hi = fn().item()
                p.data[idx] = orig - eps
                lo = fn().item()
                p.data[idx] = orig
                g[idx] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def rel_error(a, b, floor=1e-5):
    # the floor keeps exactly-zero gradients (e.g. a key bias under softmax) from
    # turning round-off into a relative error of 1
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def grad_errors(fn, params, eps=1e-4):
    """Relative error between analytic and numeric gradients, per parameter."""
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = numeric_grad(fn, params, eps)
    return [rel_error(a, n) for a, n in zip(analytic, numeric)]


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_network(instance, seed=0, R=4, d=16, patch=4, variant="full", **dec):
    from lainr.decoder import DecoderConfig
    from lainr.encoder import EncoderConfig
    from lainr.model import INRNetwork

    enc = EncoderConfig(num_blocks=1, num_heads=2, head_dim=8, R=R, patch_size=patch)
    params = dict(d=d, d_F=16 if instance.coords.shape[-1] == 2 else 24, L=2,
                  sigma_levels=(8.0, 4.0), sigma_q=2.0, sta_heads=2, variant=variant)
    params.update(dec)
    return INRNetwork.for_instance(instance, enc, DecoderConfig(**params), seed=seed)

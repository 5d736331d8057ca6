import numpy as np
import pytest
from conftest import grad_errors

from lainr import tensor as T
from lainr.errors import ConfigError, ContractError, ShapeError
from lainr.nn import LayerNorm, Linear, Module, MultiHeadAttention


def dense_attention(query, context, mha):
    """Independent loop-over-heads attention in plain numpy."""
    def lin(layer, x):
        return x @ layer.weight.data.T + layer.bias.data
    q, k, v = lin(mha.q_proj, query), lin(mha.k_proj, context), lin(mha.v_proj, context)
    dh = mha.embed_dim // mha.num_heads
    heads = []
    for h in range(mha.num_heads):
        sl = slice(h * dh, (h + 1) * dh)
        logits = q[..., sl] @ np.swapaxes(k[..., sl], -1, -2) / np.sqrt(dh)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=-1, keepdims=True)
        heads.append(w @ v[..., sl])
    return lin(mha.out_proj, np.concatenate(heads, axis=-1))


def test_linear_matches_affine_map(rng):
    layer = Linear(5, 3, rng)
    x = rng.normal(size=(2, 4, 5)).astype(np.float32)
    out = layer(T.Tensor(x))
    np.testing.assert_allclose(out.data, x @ layer.weight.data.T + layer.bias.data, rtol=1e-5, atol=1e-6)
    assert out.shape == (2, 4, 3)


def test_linear_grads(f64, rng):
    layer = Linear(4, 3, rng)
    x = T.Parameter(rng.normal(size=(5, 4)))
    w = rng.normal(size=(5, 3))
    errs = grad_errors(lambda: (layer(x) * w).sum(), [x, layer.weight, layer.bias])
    assert max(errs) < 1e-4


def test_layer_norm_module(rng):
    ln = LayerNorm(6)
    out = ln(T.Tensor(rng.normal(size=(3, 6))))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)


def test_attention_matches_dense_oracle(f64, rng):
    mha = MultiHeadAttention(8, 2, rng)
    x = rng.normal(size=(1, 3, 8))
    out = mha(T.Tensor(x), T.Tensor(x))
    np.testing.assert_allclose(out.data, dense_attention(x, x, mha), atol=1e-6)


def test_cross_attention_context_width(f64, rng):
    mha = MultiHeadAttention(8, 4, rng, context_dim=5)
    q, c = rng.normal(size=(2, 7, 8)), rng.normal(size=(2, 3, 5))
    np.testing.assert_allclose(mha(T.Tensor(q), T.Tensor(c)).data, dense_attention(q, c, mha), atol=1e-6)


def test_single_token_is_value_then_output_projection(f64, rng):
    mha = MultiHeadAttention(6, 3, rng)
    x = rng.normal(size=(1, 1, 6))
    expected = (x @ mha.v_proj.weight.data.T + mha.v_proj.bias.data) @ mha.out_proj.weight.data.T \
        + mha.out_proj.bias.data
    np.testing.assert_allclose(mha(T.Tensor(x), T.Tensor(x)).data, expected, atol=1e-10)


def test_equal_tokens_give_uniform_weights(rng):
    mha = MultiHeadAttention(4, 2, rng)
    x = np.tile(rng.normal(size=(1, 1, 4)), (1, 5, 1))
    _, w = mha(T.Tensor(x), T.Tensor(x), return_weights=True)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-6)


def test_attention_grads(f64, rng):
    mha = MultiHeadAttention(4, 2, rng)
    q = T.Parameter(rng.normal(size=(1, 3, 4)))
    c = T.Parameter(rng.normal(size=(1, 2, 4)))
    w = rng.normal(size=(1, 3, 4))
    params = [q, c] + mha.parameters()
    assert max(grad_errors(lambda: (mha(q, c) * w).sum(), params)) < 1e-4


def test_indivisible_heads_is_config_error(rng):
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 3, rng)


def test_empty_context_is_rejected(rng):
    mha = MultiHeadAttention(4, 1, rng)
    with pytest.raises(ContractError):
        mha(T.Tensor(np.ones((1, 2, 4))), T.Tensor(np.ones((1, 0, 4))))


class Pair(Module):
    def __init__(self, rng):
        self.first = Linear(2, 2, rng)
        self.rest = [Linear(2, 1, rng, bias=False)]
        self.frozen = T.Tensor(np.ones(2))


def test_parameter_discovery_and_state_dict(rng):
    m = Pair(rng)
    assert [n for n, _ in m.named_parameters()] == ["first.weight", "first.bias", "rest.0.weight"]
    assert m.num_parameters() == 4 + 2 + 2
    state = m.state_dict()
    other = Pair(np.random.default_rng(99))
    other.load_state_dict(state)
    for (_, a), (_, b) in zip(m.named_parameters(), other.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    with pytest.raises(ContractError):
        other.load_state_dict({"first.weight": state["first.weight"]})
    bad = dict(state, **{"first.bias": np.zeros(3)})
    with pytest.raises(ShapeError):
        other.load_state_dict(bad)

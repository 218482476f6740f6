import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventcast.errors import ConfigError, ContractError, NumericDomainError, ShapeError
from eventcast.numerics import (
    ParameterSet,
    Tensor,
    absolute,
    attention,
    attention_block,
    backward,
    block_shapes,
    check_directional,
    check_elementwise,
    concat,
    dropout,
    embedding,
    gelu,
    grad,
    layer_norm,
    linear,
    mean_pool,
    no_grad,
    norm,
    relative_error,
    relu,
    square,
)

TOL = 1e-4


def weights(rng, *shape):
    return rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def _block_inputs(rng, dim, prefix="b."):
    return {prefix + k: 0.5 * rng.standard_normal(s) + (1.0 if k.endswith(".g") else 0.0)
            for k, s in block_shapes(dim).items()}


@pytest.mark.parametrize("name,fn,shapes", [
    ("add-broadcast", lambda t: ((t["a"] + t["b"]) * t["a"]).sum(), {"a": (3, 4), "b": (4,)}),
    ("sub-mul", lambda t: ((t["a"] - t["b"]) * t["b"]).sum(), {"a": (2, 3), "b": (2, 3)}),
    ("div", lambda t: (t["a"] / (t["b"] * t["b"] + 1.0)).sum(), {"a": (5,), "b": (5,)}),
    ("matmul", lambda t: (t["a"] @ t["b"]).sum(), {"a": (2, 3, 4), "b": (4, 5)}),
    ("getitem", lambda t: (t["a"][1:, ::2] * 3.0).sum(), {"a": (4, 6)}),
    ("reshape-swap", lambda t: (t["a"].reshape(3, 4).swapaxes(0, 1) * t["b"]).sum(), {"a": (12,), "b": (4, 3)}),
    ("mean-axis", lambda t: (t["a"].mean(axis=0) * t["b"]).sum(), {"a": (5, 3), "b": (3,)}),
    ("gelu", lambda t: gelu(t["a"]).sum(), {"a": (3, 5)}),
    ("linear", lambda t: square(linear(t["x"], t["w"], t["b"])).sum(), {"x": (2, 3), "w": (3, 4), "b": (4,)}),
    ("layer_norm", lambda t: (layer_norm(t["x"], t["g"], t["b"]) * t["c"]).sum(), {"x": (2, 6), "g": (6,), "b": (6,), "c": (2, 6)}),
    ("relu", lambda t: relu(t["a"]).sum(), {"a": (7,)}),
    ("absolute", lambda t: absolute(t["a"]).sum(), {"a": (7,)}),
    ("norm", lambda t: norm(t["a"]).sum(), {"a": (3, 4)}),
    ("concat", lambda t: (concat([t["a"], t["b"]]) * t["c"]).sum(), {"a": (2, 3), "b": (2, 2), "c": (2, 5)}),
    ("mean_pool", lambda t: (mean_pool(t["a"], np.array([[1, 1, 0], [1, 0, 0]], bool)) * t["c"]).sum(),
     {"a": (2, 3, 4), "c": (2, 4)}),
])
def test_elementwise_gradients(name, fn, shapes, rng):
    inputs = {k: weights(rng, *s) for k, s in shapes.items()}
    errors = check_elementwise(fn, inputs)
    assert max(errors.values()) < TOL, (name, errors)


@pytest.mark.parametrize("causal", [False, True])
def test_attention_gradient(causal, rng):
    inputs = {k: weights(rng, 2, 4, 6) for k in "qkv"}
    inputs["c"] = weights(rng, 2, 4, 6)
    key_mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], bool)
    errors = check_elementwise(
        lambda t: (attention(t["q"], t["k"], t["v"], 2, causal, key_mask) * t["c"]).sum(), inputs)
    assert max(errors.values()) < TOL


def test_attention_block_gradient(rng):
    inputs = _block_inputs(rng, 4)
    inputs["x"] = rng.standard_normal((2, 3, 4))
    errors = check_elementwise(lambda t: square(attention_block(t["x"], t, "b.", 2)).sum(), inputs)
    assert max(errors.values()) < TOL


def test_embedding_gradient(rng):
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    errors = check_elementwise(lambda t: square(embedding(t["e"], ids)).sum(), {"e": weights(rng, 4, 3)})
    assert errors["e"] < TOL


def test_directional_check_agrees_with_elementwise(rng):
    w = Tensor(weights(rng, 3, 3), requires_grad=True)
    x = weights(rng, 4, 3)
    errors = check_directional(lambda: square(gelu(linear(Tensor(x), w))).sum(), {"w": w}, rng)
    assert errors["w"] < TOL


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-6])) == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


def test_grad_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        grad(x * 2.0, [x])


def test_unreached_tensor_gets_zero_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    y = Tensor(np.ones(3), requires_grad=True)
    gx, gy = grad((x * x).sum(), [x, y])
    np.testing.assert_array_equal(gx, [2.0, 2.0])
    np.testing.assert_array_equal(gy, np.zeros(3))


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array(3.0), requires_grad=True)
    (g,) = grad(x * x + x * 2.0, [x])
    assert g == pytest.approx(8.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad


def test_gelu_known_values():
    out = gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data
    c = np.sqrt(2 / np.pi)
    expect = [0.0, 0.5 * (1 + np.tanh(c * 1.044715)), -0.5 * (1 - np.tanh(c * 1.044715))]
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_gelu_rejects_nonfinite():
    with pytest.raises(NumericDomainError):
        gelu(Tensor(np.array([np.nan])))


def test_linear_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)|\(4, 5\).*\(2, 3\)"):
        linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_layer_norm_statistics(rng):
    out = layer_norm(Tensor(rng.standard_normal((3, 8)) * 5 + 2), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1.0, rtol=1e-4)


def test_layer_norm_empty_axis():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))


def test_heads_must_divide_width(rng):
    inputs = {k: Tensor(v) for k, v in _block_inputs(rng, 6).items()}
    with pytest.raises(ConfigError):
        attention_block(Tensor(np.ones((1, 2, 6))), inputs, "b.", 4)


def test_causal_attention_ignores_future(rng):
    q, k, v = (rng.standard_normal((1, 5, 4)) for _ in range(3))
    base = attention(Tensor(q), Tensor(k), Tensor(v), 2, causal=True).data
    k2, v2 = k.copy(), v.copy()
    k2[:, 3:] += 10.0
    v2[:, 3:] -= 10.0
    moved = attention(Tensor(q), Tensor(k2), Tensor(v2), 2, causal=True).data
    np.testing.assert_allclose(base[:, :3], moved[:, :3], rtol=1e-12)


def test_dropout_modes(rng):
    x = Tensor(np.ones((200, 50)))
    assert dropout(x, 0.5, rng, training=False) is x or np.array_equal(dropout(x, 0.5, rng, False).data, x.data)
    kept = dropout(x, 0.5, rng, training=True).data
    assert set(np.unique(kept)) <= {0.0, 2.0}
    assert kept.mean() == pytest.approx(1.0, abs=0.05)


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_sum_of_broadcast_add_gradient_counts(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((rows, cols)), requires_grad=True)
    b = Tensor(rng.standard_normal(cols), requires_grad=True)
    ga, gb = grad((a + b).sum(), [a, b])
    np.testing.assert_array_equal(ga, np.ones((rows, cols)))
    np.testing.assert_array_equal(gb, np.full(cols, float(rows)))


def test_parameter_set_basics(tmp_path):
    ps = ParameterSet()
    ps.add("a.w", np.arange(6.0).reshape(2, 3))
    ps.add("b.w", np.ones(2), trainable=False)
    with pytest.raises(ConfigError):
        ps.add("a.w", np.zeros(1))
    with pytest.raises(ConfigError):
        ps["missing"]
    assert ps.trainable_names() == ["a.w"]
    loss = (ps["a.w"] * ps["a.w"]).sum() + ps["b.w"].sum()
    grads = backward(loss, ps)
    assert set(grads) == {"a.w"}
    assert ps.freeze(["a."]) == ["a.w"] and ps.trainable_names() == []


def test_checkpoint_round_trip_is_deterministic(tmp_path):
    ps = ParameterSet()
    ps.add("x", np.array([[1.5, -2.25], [3.0, 0.1]]))
    ps.add("y", np.zeros(3), trainable=False)
    ps.save(tmp_path / "a.zip")
    ps.save(tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    back = ParameterSet.load(tmp_path / "a.zip")
    assert back.names() == ["x", "y"] and not back.is_trainable("y")
    np.testing.assert_array_equal(back["x"].data, ps["x"].data.astype(np.float32))

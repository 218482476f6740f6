"""Differentiable layers used by the forecasting network.

Every op accepts an optional leading batch axis. Hand-written vector-Jacobian
products keep the graph small: a layer norm or an attention core is one node.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, NumericDomainError, ShapeError
from .tensor import Tensor, _unbroadcast, as_tensor, make

GELU_COEF = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715
LN_EPS = 1e-5


def _require_finite(x: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericDomainError(f"{op}: non-finite input")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    a = x.data
    _require_finite(a, "gelu")
    t = np.tanh(GELU_COEF * (a + GELU_CUBIC * a**3))
    out = 0.5 * a * (1.0 + t)

    def vjp(g):
        du = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * du),)

    return make(out, (x,), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b``; ``w`` is (in_features, out_features)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    a, wd = x.data, w.data
    out = a @ wd
    if b is not None:
        out = out + b.data

    def vjp(g):
        ga = g @ wd.T
        gw = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        grads = [ga, gw]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make(out, parents, vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    x = as_tensor(x)
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise ShapeError("layer_norm: zero-length last axis")
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: input {x.shape} vs gain {gain.shape} / bias {bias.shape}")
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    rstd = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, n)
        return dx, (flat_g * xhat.reshape(-1, n)).sum(axis=0), flat_g.sum(axis=0)

    return make(out, (x, gain, bias), vjp)


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    causal: bool = True,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention over (..., T, D) inputs.

    ``key_mask`` is a boolean (..., T) array; False marks padding keys.
    """
    *lead, t_len, dim = q.shape
    if dim % n_heads:
        raise ConfigError(f"head count {n_heads} does not divide token dim {dim}")
    dh = dim // n_heads
    scale = 1.0 / math.sqrt(dh)

    def split(a):
        return np.swapaxes(a.reshape(*lead, t_len, n_heads, dh), -2, -3)

    def merge(a):
        return np.swapaxes(a, -2, -3).reshape(*lead, t_len, dim)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ np.swapaxes(kh, -1, -2)) * scale
    allowed = np.ones((t_len, t_len), dtype=bool)
    if causal:
        allowed = np.tril(allowed)
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)[..., None, None, :]
        allowed = allowed & km
    scores = np.where(allowed, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    out = merge(probs @ vh)

    def vjp(g):
        gh = split(g)
        gv = np.swapaxes(probs, -1, -2) @ gh
        gp = gh @ np.swapaxes(vh, -1, -2)
        gs = probs * (gp - (gp * probs).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ kh
        gk = np.swapaxes(gs, -1, -2) @ qh
        return merge(gq), merge(gk), merge(gv)

    return make(out, (q, k, v), vjp)


def split_last(x: Tensor, parts: int) -> list[Tensor]:
    size = x.shape[-1] // parts
    return [x[..., i * size:(i + 1) * size] for i in range(parts)]


def attention_block(
    tokens: Tensor,
    params: Mapping[str, Tensor],
    prefix: str = "",
    n_heads: int = 1,
    causal: bool = True,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).

    Expects parameters ``ln1.g, ln1.b, attn.w_qkv, attn.b_qkv, attn.w_o,
    attn.b_o, ln2.g, ln2.b, mlp.w_fc, mlp.b_fc, mlp.w_proj, mlp.b_proj`` under
    ``prefix``. The MLP expands the token dim by 4.
    """
    x = as_tensor(tokens)
    if x.ndim < 2:
        raise ShapeError(f"attention_block: tokens must be (seq, dim), got {x.shape}")
    dim = x.shape[-1]
    if n_heads < 1 or dim % n_heads:
        raise ConfigError(f"head count {n_heads} does not divide token dim {dim}")
    p = lambda name: params[prefix + name]  # noqa: E731
    h = layer_norm(x, p("ln1.g"), p("ln1.b"))
    q, k, v = split_last(linear(h, p("attn.w_qkv"), p("attn.b_qkv")), 3)
    a = attention(q, k, v, n_heads, causal=causal, key_mask=key_mask)
    x = x + linear(a, p("attn.w_o"), p("attn.b_o"))
    h = layer_norm(x, p("ln2.g"), p("ln2.b"))
    m = linear(gelu(linear(h, p("mlp.w_fc"), p("mlp.b_fc"))), p("mlp.w_proj"), p("mlp.b_proj"))
    return x + m


def block_shapes(dim: int, mlp_ratio: int = 4) -> dict[str, tuple]:
    hidden = mlp_ratio * dim
    return {
        "ln1.g": (dim,),
        "ln1.b": (dim,),
        "attn.w_qkv": (dim, 3 * dim),
        "attn.b_qkv": (3 * dim,),
        "attn.w_o": (dim, dim),
        "attn.b_o": (dim,),
        "ln2.g": (dim,),
        "ln2.b": (dim,),
        "mlp.w_fc": (dim, hidden),
        "mlp.b_fc": (hidden,),
        "mlp.w_proj": (hidden, dim),
        "mlp.b_proj": (dim,),
    }


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make(x.data * keep, (x,), lambda g: (g * keep,))


def mean_pool(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Average over the token axis (second to last); ``mask`` drops padding."""
    if mask is None:
        return x.mean(axis=-2)
    m = np.asarray(mask, dtype=np.float64)[..., None]
    counts = m.sum(axis=-2)
    if np.any(counts == 0):
        raise ShapeError("mean_pool: a row has no valid tokens")
    return (x * m).sum(axis=-2) / counts


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return np.split(g, bounds, axis=axis)

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)

    return make(table.data[ids], (table,), vjp)


def relu(x: Tensor) -> Tensor:
    a = x.data
    on = a > 0
    return make(np.where(on, a, 0.0), (x,), lambda g: (g * on,))


def absolute(x: Tensor) -> Tensor:
    a = x.data
    return make(np.abs(a), (x,), lambda g: (g * np.sign(a),))


def square(x: Tensor) -> Tensor:
    a = x.data
    return make(a * a, (x,), lambda g: (2.0 * g * a,))


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = x.data
    n = np.sqrt((a * a).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def vjp(g):
        return (np.expand_dims(g, axis) * np.where(n > 0, a / safe, 0.0),)

    return make(np.squeeze(n, axis=axis), (x,), vjp)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    original = x.shape
    return make(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, original),))

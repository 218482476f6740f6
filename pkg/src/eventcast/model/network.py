"""The forecasting network: encoders, fusion, decoder stack and post-regressor.

All stage functions take a leading batch axis. Passing an unbatched input
(token ids of shape (L,), a window of shape (tau, d), a vector of shape (F,))
returns an unbatched output.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError, ShapeError
from ..numerics import (
    ParameterSet,
    Tensor,
    as_tensor,
    attention_block,
    block_shapes,
    concat,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    mean_pool,
)
from .config import ModelConfig

# Parameter-name prefixes per component. Learning rates and freezing act on these.
TEXT_ENCODER = "text_encoder."
TEXT_PROJ = "text_proj."
SERIES_ENCODER = "series_encoder."
RESIDUAL = "residual."
FUSION = "fusion."
FUSION_RESIZE = "fusion_resize."
DECODER = "decoder."
DECODER_EMBED = "decoder.wpe"
REGRESSOR = "regressor."


def _add_linear(ps: ParameterSet, rng, name: str, fan_in: int, fan_out: int, trainable: bool = True):
    ps.add(f"{name}.w", rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), trainable)
    ps.add(f"{name}.b", np.zeros(fan_out), trainable)


def _add_block(ps: ParameterSet, rng, prefix: str, dim: int):
    for name, shape in block_shapes(dim).items():
        if name.endswith(".g"):
            value = np.ones(shape)
        elif ".b" in name:
            value = np.zeros(shape)
        else:
            value = rng.standard_normal(shape) / np.sqrt(shape[0])
        ps.add(prefix + name, value)


def _add_norm(ps: ParameterSet, prefix: str, dim: int):
    ps.add(prefix + "g", np.ones(dim))
    ps.add(prefix + "b", np.zeros(dim))


def init_params(config: ModelConfig, seed: int | None = None) -> ParameterSet:
    """Fresh parameters; creation order is fixed so a seed fully determines values."""
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    c = config
    ps = ParameterSet()
    de, ds, f = c.text_embed_dim, c.series_embed_dim, c.fusion_hidden

    ps.add(TEXT_ENCODER + "tok_emb", rng.standard_normal((c.vocab_size, de)))
    ps.add(TEXT_ENCODER + "pos_emb", 0.1 * rng.standard_normal((c.max_text_len, de)))
    for i in range(c.text_layers):
        _add_block(ps, rng, f"{TEXT_ENCODER}blocks.{i}.", de)
    _add_norm(ps, TEXT_ENCODER + "ln_f.", de)
    _add_linear(ps, rng, TEXT_PROJ + "l1", de, c.text_proj_hidden)
    _add_linear(ps, rng, TEXT_PROJ + "l2", c.text_proj_hidden, c.text_proj_hidden)
    _add_linear(ps, rng, TEXT_PROJ + "l3", c.text_proj_hidden, de)

    _add_linear(ps, rng, SERIES_ENCODER + "patch", c.patch_len * c.d, ds)
    ps.add(SERIES_ENCODER + "pos_emb", 0.1 * rng.standard_normal((c.max_patches, ds)))
    ps.add(SERIES_ENCODER + "mask_token", 0.1 * rng.standard_normal(ds))
    for i in range(c.series_layers):
        _add_block(ps, rng, f"{SERIES_ENCODER}blocks.{i}.", ds)
    _add_norm(ps, SERIES_ENCODER + "ln_f.", ds)
    _add_linear(ps, rng, SERIES_ENCODER + "recon", ds, c.patch_len * c.d)
    _add_linear(ps, rng, RESIDUAL + "l1", ds, c.residual_hidden)
    _add_linear(ps, rng, RESIDUAL + "l2", c.residual_hidden, c.residual_hidden)
    _add_linear(ps, rng, RESIDUAL + "l3", c.residual_hidden, ds)

    if c.use_fusion:
        _add_linear(ps, rng, FUSION + "l1", de + ds, f)
        _add_linear(ps, rng, FUSION + "l2", f, f)
    else:
        _add_linear(ps, rng, FUSION_RESIZE[:-1], de + ds, f, trainable=False)

    if c.use_decoder:
        ps.add(DECODER_EMBED, 0.1 * rng.standard_normal((c.decoder_tokens, c.token_dim)))
        for i in range(c.decoder_layers):
            _add_block(ps, rng, f"{DECODER}blocks.{i}.", c.token_dim)
        _add_norm(ps, DECODER + "ln_f.", c.token_dim)

    width = f
    if c.use_regressor:
        for i in range(c.regressor_layers):
            _add_linear(ps, rng, f"{REGRESSOR}layers.{i}", width, c.regressor_hidden)
            width = c.regressor_hidden
    _add_linear(ps, rng, REGRESSOR + "out", width, c.d * c.pred_len)
    return ps


def _batched(x, base_ndim: int):
    x = as_tensor(x)
    if x.ndim == base_ndim:
        return x.reshape((1,) + x.shape), True
    if x.ndim == base_ndim + 1:
        return x, False
    raise ShapeError(f"expected {base_ndim}-d input (optionally batched), got shape {x.shape}")


def _mlp3(x: Tensor, params, prefix: str) -> Tensor:
    h = gelu(linear(x, params[prefix + "l1.w"], params[prefix + "l1.b"]))
    h = gelu(linear(h, params[prefix + "l2.w"], params[prefix + "l2.b"]))
    return linear(h, params[prefix + "l3.w"], params[prefix + "l3.b"])


# -- textual encoder ---------------------------------------------------------

def text_hidden(ids: np.ndarray, mask: np.ndarray, params, config: ModelConfig) -> Tensor:
    """Contextual token embeddings (B, L, text_embed_dim)."""
    length = ids.shape[-1]
    if length > config.max_text_len:
        raise InputError(f"{length} tokens exceed max_text_len {config.max_text_len}")
    x = embedding(params[TEXT_ENCODER + "tok_emb"], ids) + params[TEXT_ENCODER + "pos_emb"][:length]
    for i in range(config.text_layers):
        x = attention_block(x, params, f"{TEXT_ENCODER}blocks.{i}.", config.text_heads, causal=False, key_mask=mask)
    return layer_norm(x, params[TEXT_ENCODER + "ln_f.g"], params[TEXT_ENCODER + "ln_f.b"])


def project_tokens(h: Tensor, params) -> Tensor:
    """Per-token three-layer GELU projection."""
    return _mlp3(h, params, TEXT_PROJ)


def encode_text(ids, params, config: ModelConfig, mask: np.ndarray | None = None) -> Tensor:
    """Script embedding: contextual encoder, per-token projection, masked mean pool."""
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
        mask = None if mask is None else np.asarray(mask)[None]
    if ids.shape[-1] == 0:
        raise InputError("empty token sequence")
    if mask is None:
        mask = np.ones(ids.shape, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise InputError("a token sequence is empty")
    e = mean_pool(project_tokens(text_hidden(ids, mask, params, config), params), mask)
    return e.reshape(e.shape[1:]) if single else e


# -- time-series encoder -------------------------------------------------------

def patchify(window: np.ndarray, patch_len: int) -> np.ndarray:
    """(B, T, d) -> (B, ceil(T/P), P*d), left-padding with the first value."""
    b, t, d = window.shape
    pad = (-t) % patch_len
    if pad:
        window = np.concatenate([np.repeat(window[:, :1], pad, axis=1), window], axis=1)
    n = window.shape[1] // patch_len
    return window.reshape(b, n, patch_len * d)


def series_tokens(patches: np.ndarray, params, config: ModelConfig, patch_mask: np.ndarray | None = None) -> Tensor:
    """Contextual patch embeddings (B, n, series_embed_dim)."""
    n = patches.shape[1]
    if n > config.max_patches:
        raise ShapeError(f"window of {n} patches exceeds max_window {config.max_window}")
    x = linear(Tensor(patches), params[SERIES_ENCODER + "patch.w"], params[SERIES_ENCODER + "patch.b"])
    if patch_mask is not None:
        keep = Tensor((~patch_mask)[..., None].astype(np.float64))
        x = x * keep + (1.0 - keep) * params[SERIES_ENCODER + "mask_token"]
    x = x + params[SERIES_ENCODER + "pos_emb"][:n]
    for i in range(config.series_layers):
        x = attention_block(x, params, f"{SERIES_ENCODER}blocks.{i}.", config.series_heads, causal=False)
    return layer_norm(x, params[SERIES_ENCODER + "ln_f.g"], params[SERIES_ENCODER + "ln_f.b"])


def _check_window(window: np.ndarray, config: ModelConfig) -> np.ndarray:
    window = np.asarray(window.data if isinstance(window, Tensor) else window, dtype=np.float64)
    if window.ndim not in (2, 3) or window.shape[-1] != config.d:
        raise ShapeError(f"window must be (tau, {config.d}) or batched, got {window.shape}")
    return window


def series_base(window, params, config: ModelConfig) -> Tensor:
    """Pooled base-encoder vector for each window."""
    window = _check_window(window, config)
    single = window.ndim == 2
    w = window[None] if single else window
    x = mean_pool(series_tokens(patchify(w, config.patch_len), params, config))
    return x.reshape(x.shape[1:]) if single else x


def residual_projection(x: Tensor, params) -> Tensor:
    return _mlp3(x, params, RESIDUAL)


def encode_series(window, params, config: ModelConfig) -> Tensor:
    """Base encoding plus the multi-residual refinement: Z = X + f_residual(X)."""
    x = series_base(window, params, config)
    return x + residual_projection(x, params)


def reconstruction_loss(windows: np.ndarray, params, config: ModelConfig, mask_ratio: float,
                        rng: np.random.Generator) -> Tensor:
    """Masked-patch reconstruction MSE; zero when no patch is masked."""
    windows = _check_window(windows, config)
    if windows.ndim == 2:
        windows = windows[None]
    patches = patchify(windows, config.patch_len)
    b, n, _ = patches.shape
    n_mask = int(round(mask_ratio * n))
    if n_mask == 0:
        return Tensor(0.0)
    mask = np.zeros((b, n), dtype=bool)
    for i in range(b):
        mask[i, rng.choice(n, size=n_mask, replace=False)] = True
    h = series_tokens(patches, params, config, patch_mask=mask)
    recon = linear(h, params[SERIES_ENCODER + "recon.w"], params[SERIES_ENCODER + "recon.b"])
    diff = recon - patches
    sel = Tensor(mask[..., None].astype(np.float64))
    return (diff * diff * sel).sum() * (1.0 / (mask.sum() * patches.shape[-1]))


# -- fusion, decoder, regressor -----------------------------------------------

def fuse(e, z, params, config: ModelConfig) -> Tensor:
    e, z = as_tensor(e), as_tensor(z)
    if e.shape[-1] != config.text_embed_dim or z.shape[-1] != config.series_embed_dim:
        raise ShapeError(f"fusion inputs {e.shape} and {z.shape} do not match the configured widths")
    combined = concat([e, z], axis=-1)
    if not config.use_fusion:
        return linear(combined, params[FUSION_RESIZE + "w"], params[FUSION_RESIZE + "b"])
    h = gelu(linear(combined, params[FUSION + "l1.w"], params[FUSION + "l1.b"]))
    return linear(h, params[FUSION + "l2.w"], params[FUSION + "l2.b"])


def decode(fused, params, config: ModelConfig) -> Tensor:
    """Reshape to decoder tokens, run the causal block stack, final layer norm, flatten."""
    x, single = _batched(fused, 1)
    if x.shape[-1] != config.fusion_hidden:
        raise ShapeError(f"decoder expects width {config.fusion_hidden}, got {x.shape[-1]}")
    b = x.shape[0]
    tokens = x.reshape(b, config.decoder_tokens, config.token_dim) + params[DECODER_EMBED]
    for i in range(config.decoder_layers):
        tokens = attention_block(tokens, params, f"{DECODER}blocks.{i}.", config.decoder_heads, causal=True)
    tokens = layer_norm(tokens, params[DECODER + "ln_f.g"], params[DECODER + "ln_f.b"])
    out = tokens.reshape(b, config.fusion_hidden)
    return out.reshape(config.fusion_hidden) if single else out


def regress(h, params, config: ModelConfig, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Post-regressor: k x (linear, GELU, dropout) then the output linear, shaped (d, pred_len)."""
    x, single = _batched(h, 1)
    if config.use_regressor:
        for i in range(config.regressor_layers):
            p = f"{REGRESSOR}layers.{i}."
            x = dropout(gelu(linear(x, params[p + "w"], params[p + "b"])), config.dropout, rng, training)
    y = linear(x, params[REGRESSOR + "out.w"], params[REGRESSOR + "out.b"])
    y = y.reshape(y.shape[0], config.d, config.pred_len)
    return y.reshape(config.d, config.pred_len) if single else y


def text_vector(ids, mask, params, config: ModelConfig, batch: int) -> Tensor:
    if not config.use_text:
        return Tensor(np.zeros((batch, config.text_embed_dim)))
    return encode_text(ids, params, config, mask)


def forward(ids, mask, window, params, config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Full pipeline: encode text and series, fuse, decode, regress -> (B, d, pred_len)."""
    window = _check_window(window, config)
    single = window.ndim == 2
    if single:
        window = window[None]
        ids = np.asarray(ids)[None]
        mask = None if mask is None else np.asarray(mask)[None]
    e = text_vector(ids, mask, params, config, window.shape[0])
    z = encode_series(window, params, config)
    h = fuse(e, z, params, config)
    if config.use_decoder:
        h = decode(h, params, config)
    y = regress(h, params, config, training, rng)
    return y.reshape(y.shape[1:]) if single else y

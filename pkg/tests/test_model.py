import numpy as np
import pytest

from eventcast.errors import ConfigError, InputError, ShapeError
from eventcast.model import DESK, PAPER, encode_batch, preset
from eventcast.model import network as net
from eventcast.model.tokenizer import PAD_ID, pieces
from eventcast.numerics import no_grad


@pytest.fixture(scope="module")
def full_params():
    return net.init_params(PAPER, 0)


def test_full_width_dimensions(full_params):
    ids, mask = encode_batch(["Nonfarm payrolls rose by 250,000."], PAPER.vocab_size, PAPER.max_text_len)
    window = np.random.default_rng(0).standard_normal((35, 1))
    with no_grad():
        e = net.encode_text(ids[0], full_params, PAPER, mask[0])
        z = net.encode_series(window, full_params, PAPER)
        fused = net.fuse(e, z, full_params, PAPER)
        assert e.shape == (768,) and z.shape == (768,)
        assert fused.shape == (1024,)
        assert net.decode(fused, full_params, PAPER).shape == (1024,)


@pytest.mark.parametrize("pred_len", [35, 70, 140])
def test_forecast_shape_per_horizon(pred_len):
    cfg = DESK.replace(pred_len=pred_len)
    params = net.init_params(cfg, 0)
    ids, mask = encode_batch(["CPI rose", "claims fell sharply"], cfg.vocab_size, cfg.max_text_len)
    with no_grad():
        y = net.forward(ids, mask, np.zeros((2, pred_len, 1)), params, cfg)
        single = net.forward(ids[0], mask[0], np.zeros((pred_len, 1)), params, cfg)
    assert y.shape == (2, 1, pred_len)
    assert single.shape == (1, pred_len)
    np.testing.assert_allclose(single.data, y.data[0], rtol=1e-10, atol=1e-12)


def test_ohlc_forecast_shape():
    cfg = DESK.replace(d=4)
    params = net.init_params(cfg, 0)
    ids, mask = encode_batch(["GDP grew"], cfg.vocab_size, cfg.max_text_len)
    with no_grad():
        assert net.forward(ids, mask, np.zeros((1, 35, 4)), params, cfg).shape == (1, 4, 35)


def test_init_is_seeded():
    a, b, c = net.init_params(DESK, 3), net.init_params(DESK, 3), net.init_params(DESK, 4)
    assert a.names() == b.names()
    assert all(np.array_equal(a[n].data, b[n].data) for n in a.names())
    assert not np.array_equal(a["regressor.out.w"].data, c["regressor.out.w"].data)


def test_padding_does_not_change_text_embedding():
    params = net.init_params(DESK, 0)
    ids, mask = encode_batch(["rates held", "a much longer release text about wages"], DESK.vocab_size, DESK.max_text_len)
    alone, alone_mask = encode_batch(["rates held"], DESK.vocab_size, DESK.max_text_len)
    with no_grad():
        batched = net.encode_text(ids, params, DESK, mask).data[0]
        single = net.encode_text(alone, params, DESK, alone_mask).data[0]
    np.testing.assert_allclose(batched, single, rtol=1e-10, atol=1e-12)


def test_window_length_is_checked():
    params = net.init_params(DESK, 0)
    with pytest.raises(ShapeError):
        net.encode_series(np.zeros((35, 2)), params, DESK)
    with pytest.raises(ShapeError):
        net.encode_series(np.zeros((400, 1)), params, DESK)


def test_fusion_width_mismatch():
    params = net.init_params(DESK, 0)
    with pytest.raises(ShapeError):
        net.fuse(np.zeros(5), np.zeros(DESK.series_embed_dim), params, DESK)


@pytest.mark.parametrize("changes,prefix_present,prefix_absent", [
    ({"use_fusion": False}, "fusion_resize.", "fusion.l1"),
    ({"use_decoder": False}, "regressor.", "decoder."),
    ({"use_regressor": False}, "regressor.out", "regressor.layers"),
])
def test_ablation_parameter_layout(changes, prefix_present, prefix_absent):
    cfg = DESK.replace(**changes)
    params = net.init_params(cfg, 0)
    names = params.names()
    assert any(n.startswith(prefix_present) for n in names)
    assert not any(n.startswith(prefix_absent) for n in names)
    ids, mask = encode_batch(["CPI rose"], cfg.vocab_size, cfg.max_text_len)
    with no_grad():
        assert net.forward(ids, mask, np.zeros((1, 35, 1)), params, cfg).shape == (1, 1, 35)
    if not cfg.use_fusion:
        assert not params.is_trainable("fusion_resize.w")


def test_text_off_ignores_text():
    cfg = DESK.replace(use_text=False)
    params = net.init_params(cfg, 0)
    w = np.random.default_rng(1).standard_normal((1, 35, 1))
    with no_grad():
        a = net.forward(*encode_batch(["prices soared"], cfg.vocab_size, cfg.max_text_len), w, params, cfg).data
        b = net.forward(*encode_batch(["prices collapsed"], cfg.vocab_size, cfg.max_text_len), w, params, cfg).data
    np.testing.assert_array_equal(a, b)


def test_config_validation():
    with pytest.raises(ConfigError):
        DESK.replace(decoder_tokens=5)
    with pytest.raises(ConfigError):
        DESK.replace(d=2)
    with pytest.raises(ConfigError):
        DESK.replace(no_such_field=1)
    with pytest.raises(ConfigError):
        preset("huge")
    assert preset("paper").token_dim == 128
    assert DESK.digest() == preset("desk").digest() != PAPER.digest()


def test_tokenizer():
    assert pieces("CPI rose 0.3%") == ["cpi", "rose", "0.3", "%"]
    assert pieces("Internationalization")[:2] == ["intern", "##ationa"]
    ids, mask = encode_batch(["a b c", "d"], 64, 10)
    assert ids.shape == (2, 3) and ids[1, 1] == PAD_ID and mask.sum() == 4
    assert (ids[mask] > 0).all()
    with pytest.raises(InputError):
        encode_batch(["   "], 64, 10)


def test_reconstruction_loss_empty_mask_is_zero():
    params = net.init_params(DESK, 0)
    rng = np.random.default_rng(0)
    assert net.reconstruction_loss(np.ones((2, 35, 1)), params, DESK, 0.0, rng).item() == 0.0
    assert net.reconstruction_loss(rng.standard_normal((2, 35, 1)), params, DESK, 0.3, rng).item() > 0.0

import numpy as np
import pytest

from oracles import model_grad_errors
from sepgenre.errors import ConfigError, DivergenceError, FormatError
from sepgenre.nn.checkpoint import load_model, save_model
from sepgenre.nn.layers import Dropout
from sepgenre.nn.model import (
    VARIANTS,
    Adam,
    ModelConfig,
    build_model,
    count_params,
    flatten_size,
    train_step,
)


def small_config(variant, **kw):
    kw.setdefault("input_shape", (16, 20))
    kw.setdefault("conv_filters", (2, 3))
    return ModelConfig(variant, 3, dtype="float64", **kw)


def test_flatten_size_for_canonical_input():
    assert flatten_size(ModelConfig("conv2d_stems3", 6)) == 8 * 28 * 16 == 3584


def test_param_counts_by_hand():
    sep = count_params(ModelConfig("dwconv_stems3", 6))
    std = count_params(ModelConfig("conv2d_stems3", 6))
    # first block: 3x3 over 3 channels into 8 filters
    assert std["layers"][0]["weights"] == 216
    assert sep["layers"][0]["weights"] + sep["layers"][1]["weights"] == 27 + 24
    assert std["weights"] == 216 + 1152 + 21504
    assert sep["weights"] == 27 + 24 + 72 + 128 + 21504
    assert sep["weights_and_biases"] == 21755 + 30
    assert sep["trainable"] == 21785 + 48
    assert std["trainable"] == 22872 + 30 + 48


def test_param_counts_match_built_model():
    for variant in VARIANTS:
        cfg = ModelConfig(variant, 6)
        model = build_model(cfg, 0)
        n = sum(layer.params[name].size for _, layer, name in model.named_params())
        assert n == count_params(cfg)["trainable"]


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig("conv2d_stems3", 6, in_channels=1)
    with pytest.raises(ConfigError):
        ModelConfig("nope", 6)
    with pytest.raises(ConfigError):
        ModelConfig("conv2d_full", 6, dropout_p=1.0)
    with pytest.raises(ConfigError):
        build_model(ModelConfig("conv2d_full", 6, input_shape=(8, 8)))


def test_build_is_seeded():
    cfg = ModelConfig("dwconv_stems3", 4)
    a, b, c = build_model(cfg, 5), build_model(cfg, 5), build_model(cfg, 6)
    for (_, la, n), (_, lb, _) in zip(a.named_params(), b.named_params()):
        assert np.array_equal(la.params[n], lb.params[n])
    assert not np.array_equal(a.layers[0].params["dw.W"], c.layers[0].params["dw.W"])


@pytest.mark.parametrize("variant", VARIANTS)
def test_full_model_gradient(variant):
    cfg = small_config(variant)
    model = build_model(cfg, 1)
    # input gradients are not needed for training but we check them here too
    model.layers[0].needs_input_grad = True
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 16, 20, cfg.in_channels))
    labels = np.array([0, 1, 2, 1])
    cw = np.array([1.0, 0.5, 2.0])
    drop = next(layer for layer in model.layers if isinstance(layer, Dropout))
    total, per_param, input_err = model_grad_errors(model, x, labels, cw, drop)
    assert total < 1e-4
    for key, (rel, abs_err, norm) in per_param.items():
        if norm > 1e-6:
            assert rel < 1e-4, key
        else:
            # conv biases ahead of batch norm have an exactly zero gradient
            assert abs_err < 1e-8, key
    assert input_err < 1e-4


def test_first_layer_skips_input_gradient(rng):
    model = build_model(small_config("conv2d_full"), 0)
    x = rng.normal(size=(2, 16, 20, 1))
    model.forward(x, train=True)
    assert model.backward(np.ones((2, 3))) is None


def test_training_reduces_loss_on_separable_data():
    cfg = ModelConfig("conv2d_full", 2, input_shape=(16, 16), conv_filters=(4, 4), dropout_p=0.0)
    model = build_model(cfg, 0)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 0.2, size=(16, 16, 16, 1)).astype(np.float32)
    y = np.arange(16) % 2
    x[y == 1, :8] += 0.8
    opt = Adam.for_config(cfg)
    first = train_step(model, x, y, opt)
    for _ in range(60):
        last = train_step(model, x, y, opt)
    assert last < first
    assert np.all(model.predict_proba(x).argmax(axis=1) == y)


def test_divergence_raises(rng):
    cfg = small_config("conv2d_full")
    model = build_model(cfg, 0)
    x = np.full((2, 16, 20, 1), np.nan)
    with pytest.raises(DivergenceError):
        train_step(model, x, [0, 1], Adam())


def test_adam_first_step_moves_by_lr():
    cfg = small_config("conv2d_full", l1=0.0, l2=0.0)
    model = build_model(cfg, 0)
    before = model.layers[-1].params["W"].copy()
    rng = np.random.default_rng(1)
    train_step(model, rng.normal(size=(2, 16, 20, 1)), [0, 1], Adam(lr=1e-3))
    moved = np.abs(model.layers[-1].params["W"] - before)
    g = model.layers[-1].grads["W"]
    np.testing.assert_allclose(moved[np.abs(g) > 1e-6], 1e-3, rtol=1e-3)


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = ModelConfig("dwconv_stems3", 4, input_shape=(32, 32))
    model = build_model(cfg, 9)
    x = rng.uniform(size=(3, 32, 32, 3)).astype(np.float32)
    model.forward(x, train=True)  # move the running statistics
    save_model(model, tmp_path / "m.ssgm")
    raw = (tmp_path / "m.ssgm").read_bytes()
    assert raw[:4] == b"SSGM"
    back = load_model(tmp_path / "m.ssgm")
    assert back.config == cfg
    np.testing.assert_array_equal(back.forward(x), model.forward(x))
    (tmp_path / "t.ssgm").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_model(tmp_path / "t.ssgm")
    (tmp_path / "b.ssgm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_model(tmp_path / "b.ssgm")

import numpy as np
import pytest

from fontpair import netmodel
from fontpair.errors import InvalidConfig, ShapeMismatch


def conv_loops(x, w, b, pad):
    """Plain cross-correlation, x (H, W, Cin), w (Cout, Cin, k, k)."""
    k = w.shape[-1]
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ho, wo = xp.shape[0] - k + 1, xp.shape[1] - k + 1
    out = np.zeros((ho, wo, w.shape[0]))
    for i in range(ho):
        for j in range(wo):
            patch = xp[i:i + k, j:j + k, :]
            for o in range(w.shape[0]):
                out[i, j, o] = np.sum(patch * w[o].transpose(1, 2, 0)) + b[o]
    return out


def test_conv_matches_loops():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 7, 7, 3))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    y, _ = netmodel._conv_forward(x, w, b, 1, 1)
    for n in range(2):
        np.testing.assert_allclose(y[n], conv_loops(x[n], w, b, 1), atol=1e-10)


def test_pool_first_index_wins_ties():
    x = np.zeros((1, 2, 2, 1))
    out, idx = netmodel._pool_forward(x, 2)
    d = netmodel._pool_backward(np.ones_like(out), idx, x.shape, 2)
    np.testing.assert_array_equal(d[0, :, :, 0], [[1, 0], [0, 0]])


def test_default_shapes():
    cfg = netmodel.ModelConfig()
    assert cfg.stream_shape() == (32, 25, 25)
    shapes = cfg.param_shapes()
    assert shapes["fc1.weight"] == (512, 40000)
    assert shapes["conv1.weight"] == (16, 1, 3, 3)
    assert shapes["fc3.weight"] == (2, 256)


@pytest.mark.parametrize("bad", [
    dict(conv_channels=(8, 8, 8)),
    dict(fc_sizes=(8, 8, 3)),
    dict(pool_positions=(2, 2)),
    dict(dropout_keep=0.0),
    dict(input_size=2),
])
def test_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        netmodel.ModelConfig(**bad)


def test_shape_mismatch(small_model):
    with pytest.raises(ShapeMismatch):
        netmodel.forward(small_model, np.zeros((9, 9)), np.zeros((9, 9)))
    with pytest.raises(ShapeMismatch):
        netmodel.forward(small_model, np.zeros((2, 8, 8)), np.zeros((3, 8, 8)))


def test_batch_equals_single(small_model):
    rng = np.random.default_rng(1)
    a, b = rng.random((5, 8, 8)), rng.random((5, 8, 8))
    batch = netmodel.forward(small_model, a, b)
    for i in range(5):
        np.testing.assert_allclose(netmodel.forward(small_model, a[i], b[i]), batch[i], atol=1e-12)


def test_dropout_reproducible(small_model):
    rng = np.random.default_rng(2)
    a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    p1 = netmodel.forward(small_model, a, b, train_mode=True, dropout_seed=7)
    p2 = netmodel.forward(small_model, a, b, train_mode=True, dropout_seed=7)
    np.testing.assert_array_equal(p1, p2)
    # eval mode ignores the seed
    np.testing.assert_array_equal(netmodel.forward(small_model, a, b, dropout_seed=1),
                                  netmodel.forward(small_model, a, b, dropout_seed=2))


def test_loss_floor():
    assert netmodel.loss(np.array([1.0, 0.0]), 1) == pytest.approx(-np.log(1e-12))
    assert netmodel.loss(np.array([0.25, 0.75]), 1) == pytest.approx(-np.log(0.75))
    np.testing.assert_allclose(netmodel.loss(np.array([[0.5, 0.5], [0.9, 0.1]]), [0, 0]),
                               -np.log([0.5, 0.9]))


def _flat_loss(model, a, b, y, seed):
    train = seed is not None
    probs = netmodel.forward(model, a, b, train_mode=train, dropout_seed=seed)
    return float(np.mean(netmodel.loss(probs, y)))


def fd_relative_error(model, a, b, y, dropout_seed=None, h_scale=1e-3):
    """Max over all parameters of |analytic - central FD| / max(|analytic|, |FD|)."""
    _, _, grads = netmodel.loss_and_grad(model, a, b, y, dropout_seed is not None, dropout_seed)
    worst = 0.0
    for name, theta in model.params.items():
        g = grads[name]
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            h = h_scale * max(abs(old), 1)
            theta[idx] = old + h
            up = _flat_loss(model, a, b, y, dropout_seed)
            theta[idx] = old - h
            down = _flat_loss(model, a, b, y, dropout_seed)
            theta[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    return worst, grads


def generic_model(config, seed):
    """Default init plus small random biases, so no pre-activation sits exactly on a ReLU kink."""
    model = netmodel.init_params(config, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for k, v in model.params.items():
        if k.endswith(".bias"):
            model.params[k] = rng.normal(0, 0.1, v.shape)
    return model


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("dropout", [False, True])
def test_gradients_are_exact(small_config, seed, dropout):
    # small step: piecewise-linear pieces are only locally linear
    model = generic_model(small_config, seed)
    rng = np.random.default_rng(seed)
    a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    y = np.array([0, 1, 1])
    err, grads = fd_relative_error(model, a, b, y, 50 + seed if dropout else None, h_scale=1e-6)
    assert err < 1e-3
    assert grads["conv1.weight"].any() or dropout
    assert grads["fc3.weight"].any()


def test_stream_weights_are_shared(small_model):
    img = np.random.default_rng(5).random((8, 8))
    _, _, ga, gb = netmodel.target_gradients(small_model, img, img, netmodel.SAME)
    f = netmodel.stream_forward(small_model, img)
    ma, mb, _, _ = netmodel.target_gradients(small_model, img[None], img[None], 1)
    np.testing.assert_array_equal(ma[0], mb[0])
    np.testing.assert_array_equal(ma[0], f.last_conv)


def test_head_logits_matches_forward(small_model):
    rng = np.random.default_rng(6)
    a, b = rng.random((4, 8, 8)), rng.random((4, 8, 8))
    fa = netmodel.stream_forward(small_model, a).flat
    fb = netmodel.stream_forward(small_model, b).flat
    np.testing.assert_allclose(netmodel.head_logits(small_model, fa, fb),
                               netmodel.logits(small_model, a, b), atol=1e-12)


def test_checkpoint_round_trip(tmp_path, small_config):
    m = netmodel.init_params(small_config, 9)
    m.metadata["note"] = "x"
    m.trained_epochs = 4
    m.save(tmp_path / "m.ckpt")
    back = netmodel.ModelCheckpoint.load(tmp_path / "m.ckpt")
    assert back.config == small_config and back.trained_epochs == 4 and back.metadata == {"note": "x"}
    for k in m.params:
        np.testing.assert_array_equal(back.params[k], m.params[k])
        assert back.params[k].dtype == np.float32


def test_checkpoint_shape_check(tmp_path, small_config):
    m = netmodel.init_params(small_config, 0)
    m.params["fc1.bias"] = np.zeros(9, np.float32)
    m.save(tmp_path / "bad.ckpt")
    with pytest.raises(ShapeMismatch):
        netmodel.ModelCheckpoint.load(tmp_path / "bad.ckpt")


def test_init_reproducible(small_config):
    a, b = netmodel.init_params(small_config, 5), netmodel.init_params(small_config, 5)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])

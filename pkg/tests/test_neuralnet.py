"""Network gradients, the optimizer, training control flow and codecs."""

import numpy as np
import pytest

from rydtomo.neuralnet import (
    AdamState,
    Mlp,
    OperatorCodec,
    PositionCodec,
    RegressionModel,
    TrainingConfig,
    adam_step,
    load_model,
    save_model,
    split_operator_prediction,
    train_mlp,
    train_operator_regressor,
    train_position_regressor,
)


def finite_difference_check(net, x, target, h=1e-6):
    """Largest relative deviation between backprop and central differences."""
    _, grads = net.gradients(x, target)
    worst = 0.0
    for param, grad in zip(net.parameters, grads):
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = net.loss(x, target)
            flat[idx] = keep - h
            down = net.loss(x, target)
            flat[idx] = keep
            numeric = (up - down) / (2 * h)
            scale = max(abs(numeric), abs(gflat[idx]), 1e-8)
            worst = max(worst, abs(numeric - gflat[idx]) / scale)
    return worst


def test_backprop_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = Mlp([7, 9, 6, 3], seed=1)
    x = rng.normal(size=(5, 7))
    target = rng.normal(size=(5, 3))
    assert finite_difference_check(net, x, target) < 1e-6


def test_initialization_is_seeded_and_bounded():
    net = Mlp([10, 20, 4], seed=3)
    again = Mlp([10, 20, 4], seed=3)
    for a, b in zip(net.parameters, again.parameters):
        np.testing.assert_array_equal(a, b)
    other = Mlp([10, 20, 4], seed=4)
    assert any(not np.array_equal(a, b)
               for a, b in zip(net.parameters, other.parameters))
    bound0 = np.sqrt(6.0 / 10.0)
    assert np.abs(net.weights[0]).max() <= bound0
    assert not np.any(net.biases[0])


def test_forward_is_plain_relu_affine_stack():
    net = Mlp([2, 2, 1], seed=0)
    net.weights[0][:] = np.array([[1.0, -1.0], [0.5, 2.0]])
    net.biases[0][:] = np.array([0.1, -0.2])
    net.weights[1][:] = np.array([[2.0], [-3.0]])
    net.biases[1][:] = np.array([0.25])
    x = np.array([[1.0, 2.0]])
    hidden = np.maximum(x @ net.weights[0] + net.biases[0], 0.0)
    expected = hidden @ net.weights[1] + net.biases[1]
    np.testing.assert_allclose(net.forward(x), expected, rtol=1e-15)
    diff = net.forward(x) - np.array([[1.0]])
    assert net.loss(x, np.array([[1.0]])) == pytest.approx(float(diff[0, 0] ** 2))


def test_adam_single_parameter_hand_check():
    params = [np.array([1.0])]
    state = AdamState.for_parameters(params)
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8

    adam_step(params, [np.array([2.0])], state, lr, b1, b2, eps)
    # first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    assert params[0][0] == pytest.approx(1.0 - 0.1 * (2.0 / (2.0 + eps)), rel=1e-12)
    assert state.t == 1

    m = 0.9 * (0.1 * 2.0) + 0.1 * 3.0
    v = 0.999 * (0.001 * 4.0) + 0.001 * 9.0
    m_hat = m / (1 - 0.9 ** 2)
    v_hat = v / (1 - 0.999 ** 2)
    before = params[0][0]
    adam_step(params, [np.array([3.0])], state, lr, b1, b2, eps)
    assert params[0][0] == pytest.approx(
        before - lr * m_hat / (np.sqrt(v_hat) + eps), rel=1e-12)


def linear_task(seed=0, n=256):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    w = np.array([[1.0, -2.0], [0.5, 0.0], [-1.5, 1.0]])
    return x, x @ w + 0.1


def test_training_fits_a_linear_map():
    x, t = linear_task()
    net = Mlp([3, 32, 2], seed=0)
    history = train_mlp(net, x, t, TrainingConfig(epochs=2000, patience=2000, seed=0))
    assert net.loss(x, t) < 2e-3
    assert history.best_val_loss < 2e-3
    assert len(history.epochs) <= 2000


def test_training_is_deterministic():
    x, t = linear_task(1)
    cfg = TrainingConfig(epochs=40, patience=40, seed=5)
    a = Mlp([3, 8, 2], seed=2)
    train_mlp(a, x, t, cfg)
    b = Mlp([3, 8, 2], seed=2)
    train_mlp(b, x, t, cfg)
    for pa, pb in zip(a.parameters, b.parameters):
        np.testing.assert_array_equal(pa, pb)


def test_early_stopping_restores_the_best_epoch():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(64, 4))
    t = rng.normal(size=(64, 2))  # pure noise invites overfitting
    net = Mlp([4, 64, 2], seed=0)
    cfg = TrainingConfig(epochs=400, patience=10, seed=0)
    history = train_mlp(net, x, t, cfg)
    assert history.stopped_early
    assert len(history.epochs) < 400
    assert history.best_epoch <= len(history.epochs)
    # the held-out slice is the first chunk of the seeded permutation
    n_val = max(1, int(round(cfg.val_fraction * 64)))
    val_idx = np.random.default_rng(cfg.seed).permutation(64)[:n_val]
    val_loss = net.loss(x[val_idx], t[val_idx])
    assert val_loss == pytest.approx(history.best_val_loss, rel=1e-9)
    recorded = min(e.val_loss for e in history.epochs)
    assert recorded == pytest.approx(history.best_val_loss, rel=1e-12)


def test_divergence_raises():
    x, t = linear_task(2)
    net = Mlp([3, 8, 2], seed=0)
    with np.errstate(all="ignore"), pytest.raises(RuntimeError, match="diverged"):
        train_mlp(net, x, t, TrainingConfig(epochs=200, patience=200,
                                            learning_rate=1e100, seed=0))


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(epochs=0).validate()
    with pytest.raises(ValueError):
        TrainingConfig(val_fraction=1.5).validate()
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0).validate()
    cfg = TrainingConfig.from_dict(TrainingConfig(epochs=7).to_dict())
    assert cfg.epochs == 7


def test_mismatched_rows_raise():
    net = Mlp([3, 4, 2], seed=0)
    with pytest.raises(ValueError):
        train_mlp(net, np.zeros((10, 3)), np.zeros((9, 2)), TrainingConfig())


def test_position_codec_maps_box_to_unit_square():
    codec = PositionCodec(box_size=10.0, m=2)
    coords = np.array([[[-5.0, 0.0], [5.0, 2.5]]])
    encoded = codec.encode(coords)
    np.testing.assert_allclose(encoded, [[0.0, 0.5, 1.0, 0.75]])
    np.testing.assert_allclose(codec.decode(encoded), coords)
    assert codec.n_outputs == 4


def test_operator_codec_standardizes_and_restores():
    rng = np.random.default_rng(3)
    raw = rng.normal(5.0, 3.0, size=(40, 6))
    raw[:, 4] = 2.0  # constant component survives the round trip
    codec = OperatorCodec.fit(raw)
    z = codec.encode(raw)
    np.testing.assert_allclose(z[:, :4].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z[:, 4], 0.0, atol=1e-12)
    np.testing.assert_allclose(codec.decode(z), raw, rtol=1e-12)


def test_operator_prediction_splits_into_shift_and_amplitude():
    pred = np.arange(15.0)[None, :]
    h, l = split_operator_prediction(pred)
    np.testing.assert_array_equal(h[0], np.arange(5.0))
    np.testing.assert_array_equal(l[0].real, np.arange(5.0, 10.0))
    np.testing.assert_array_equal(l[0].imag, np.arange(10.0, 15.0))


def test_position_regressor_end_to_end(tmp_path):
    rng = np.random.default_rng(4)
    coords = rng.uniform(-5, 5, size=(128, 2, 2))
    # synthetic features: an easy, roughly unit-scale probe of the coordinates
    mix = rng.normal(size=(4, 12))
    features = coords.reshape(128, 4) @ mix / 12.0
    model = train_position_regressor(
        features, coords.reshape(128, 4), box_size=10.0,
        config=TrainingConfig(epochs=1500, patience=1500, seed=0),
        hidden=(32,))
    pred = model.predict(features)
    assert pred.shape == (128, 2, 2)
    assert np.mean(np.abs(pred - coords)) < 0.5
    save_model(model, tmp_path / "pos.json")
    again = load_model(tmp_path / "pos.json")
    np.testing.assert_allclose(again.predict(features), pred, rtol=1e-12)
    assert isinstance(again, RegressionModel)
    assert again.meta["target"] == model.meta["target"]


def test_operator_regressor_end_to_end(tmp_path):
    rng = np.random.default_rng(5)
    ops = rng.normal(size=(96, 15)) * np.linspace(0.5, 40.0, 15)
    mix = rng.normal(size=(15, 20))
    features = ops @ mix / 40.0
    model = train_operator_regressor(
        features, ops, config=TrainingConfig(epochs=300, patience=300, seed=0),
        hidden=(48,))
    pred = model.predict(features)
    assert pred.shape == (96, 15)
    # decoded predictions live on the raw scale, not the standardized one
    assert np.corrcoef(pred[:, 14], ops[:, 14])[0, 1] > 0.9
    save_model(model, tmp_path / "ops.json")
    again = load_model(tmp_path / "ops.json")
    np.testing.assert_allclose(again.predict(features), pred, rtol=1e-12)

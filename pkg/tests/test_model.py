import math

import numpy as np
import pytest
from sklearn.base import clone

from silence_ser.metrics import TaskWeights, multitask_loss
from silence_ser.model import (
    EarlyStopping,
    ModelConfig,
    MultitaskRegressor,
    Network,
    Standardizer,
    TrainConfig,
    forward,
    grad,
    init_network,
    load_network,
    loss_and_grad,
    pad_sequences,
    parameter_count,
    predict_and_evaluate,
    save_network,
    train,
)


def fitted(net, X):
    net.standardizer = Standardizer().fit(X)
    return net


def batch(cfg, n, rng):
    shape = (n, cfg.input_dim) if cfg.mode == "vector" else (n, cfg.seq_len, cfg.input_dim)
    return rng.standard_normal(shape), rng.uniform(-1, 1, (n, 3))


def numeric_grad(net, X, Y, w, h=1e-5):
    out = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = multitask_loss(forward(net, X), Y, w)
            p[idx] = old - h
            dn = multitask_loss(forward(net, X), Y, w)
            p[idx] = old
            g[idx] = (up - dn) / (2 * h)
        out[name] = g
    return out


def relative_error(a, b):
    va = np.concatenate([a[k].ravel() for k in sorted(a)])
    vb = np.concatenate([b[k].ravel() for k in sorted(b)])
    return np.linalg.norm(va - vb) / max(np.linalg.norm(va) + np.linalg.norm(vb), 1e-30)


def random_config(rng, i):
    mode = ("vector", "vector", "sequence")[i % 3]
    cell = "lstm" if mode == "sequence" or i % 2 else "dense"
    hidden = tuple(int(h) for h in rng.integers(1, 6, size=int(rng.integers(1, 4))))
    return ModelConfig(int(rng.integers(1, 5)), hidden, mode, cell, int(rng.integers(1, 4)), seed=i)


def gradient_check_configs(n=20, seed=2024):
    rng = np.random.default_rng(seed)
    return [random_config(rng, i) for i in range(n)]


@pytest.mark.parametrize("cfg", gradient_check_configs(), ids=lambda c: f"{c.mode}-{c.cell}-{c.hidden}-T{c.timesteps}")
def test_gradient_matches_finite_differences(cfg):
    rng = np.random.default_rng(cfg.seed)
    X, Y = batch(cfg, int(rng.integers(3, 8)), rng)
    net = fitted(init_network(cfg), X)
    w = TaskWeights(*rng.uniform(0.1, 1, 3))
    assert relative_error(grad(net, X, Y, w), numeric_grad(net, X, Y, w)) < 1e-4


def test_single_lstm_step_gradient():
    cfg = ModelConfig(3, (4,), "sequence", "lstm", seq_len=1, seed=5)
    rng = np.random.default_rng(5)
    X, Y = batch(cfg, 5, rng)
    net = fitted(init_network(cfg), X)
    assert relative_error(grad(net, X, Y), numeric_grad(net, X, Y, TaskWeights())) < 1e-4


def test_perfect_fit_is_stationary(rng):
    for cfg in (ModelConfig(5, (8, 8)), ModelConfig(3, (4,), "sequence", "lstm", 3)):
        X, _ = batch(cfg, 12, rng)
        net = fitted(init_network(cfg), X)
        Y = forward(net, X)
        loss, g = loss_and_grad(net, X, Y)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert math.sqrt(sum(float(np.sum(v * v)) for v in g.values())) < 1e-8


def test_degenerate_column_contributes_no_gradient(rng):
    X = rng.standard_normal((6, 4))
    net = fitted(init_network(ModelConfig(4, (3,))), X)
    Y = rng.uniform(-1, 1, (6, 3))
    Y[:, 1] = 0.2
    net.params["W_head"][:, 1] = 0.0
    g = grad(net, X, Y)
    assert np.all(np.isfinite(g["W_head"]))


def test_init_deterministic():
    cfg = ModelConfig(47)
    assert init_network(cfg).checksum() == init_network(cfg).checksum()
    assert init_network(cfg).checksum() != init_network(ModelConfig(47, seed=1)).checksum()


def test_init_ranges():
    net = init_network(ModelConfig(47, (64, 32), cell="lstm"))
    limit = math.sqrt(6 / (47 + 64))
    assert np.abs(net.params["Wx0"]).max() <= limit
    assert net.params["b0"][64:128].tolist() == [1.0] * 64
    assert not net.params["b0"][:64].any() and not net.params["b_head"].any()


def test_parameter_count_closed_form():
    assert parameter_count(ModelConfig(47)) == 47 * 64 + 64 + 2 * (64 * 64 + 64) + 3 * (64 + 1) == 11587
    assert init_network(ModelConfig(47)).parameter_count() == 11587


def test_full_shape_parameter_count():
    n = parameter_count(ModelConfig.full_shape(47))
    lstm = lambda i, h: 4 * (i * h + h * h + h)  # noqa: E731
    assert n == lstm(47, 512) + 2 * lstm(512, 512) + 3 * 513
    assert 4e6 <= n <= 6e6
    assert parameter_count(ModelConfig.full_shape(46)) < n


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(0)
    with pytest.raises(ValueError):
        ModelConfig(4, (0,))
    with pytest.raises(ValueError):
        ModelConfig(4, mode="sequence", cell="dense")
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=10, patience=10)


def test_zero_weights_output_head_biases(rng):
    X = rng.standard_normal((5, 6))
    for cell in ("dense", "lstm"):
        net = fitted(init_network(ModelConfig(6, (4, 4), cell=cell)), X)
        for k in net.params:
            net.params[k][...] = 0.0
        net.params["b_head"][:] = [0.1, -0.2, 0.3]
        np.testing.assert_array_equal(forward(net, X), np.tile([0.1, -0.2, 0.3], (5, 1)))


def test_identical_rows_identical_outputs(rng):
    X = np.tile(rng.standard_normal(47), (4, 1))
    net = fitted(init_network(ModelConfig(47)), rng.standard_normal((10, 47)))
    out = forward(net, X)
    assert out.shape == (4, 3) and np.all(np.isfinite(out))
    assert np.all(out == out[0])


def test_forward_requires_fit_and_shape(rng):
    net = init_network(ModelConfig(4))
    with pytest.raises(ValueError, match="standardizer"):
        forward(net, np.zeros((2, 4)))
    fitted(net, rng.standard_normal((5, 4)))
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 5)))


def test_standardizer_floor():
    s = Standardizer().fit(np.ones((5, 2)))
    assert np.all(s.scale_ == 1e-8)
    assert np.all(s.transform(np.ones((3, 2))) == 0)


def test_early_stopping_constant_loss():
    stop = EarlyStopping(10)
    epochs = 0
    for epoch in range(1, 101):
        stop.update(epoch, 0.5)
        epochs = epoch
        if stop.should_stop:
            break
    assert epochs == 11 and stop.best_epoch == 1


def test_early_stopping_decreasing_loss():
    stop = EarlyStopping(10)
    for epoch in range(1, 101):
        stop.update(epoch, 1.0 / epoch)
        assert not stop.should_stop
    assert stop.best_epoch == 100


def test_train_with_frozen_weights_stops_at_eleven(rng):
    X, Y = rng.standard_normal((20, 5)), rng.uniform(-1, 1, (20, 3))
    net0 = init_network(ModelConfig(5, (4,)))
    best, history = train(net0, X[:15], Y[:15], X[15:], Y[15:], TrainConfig(learning_rate=0.0))
    assert len(history) == 11
    assert best.checksum() == net0.checksum()


def linear_corpus(n=400, d=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    Y = X @ rng.standard_normal((d, 3))
    return X, Y / np.abs(Y).max()


def test_learns_noise_free_linear_corpus():
    X, Y = linear_corpus()
    best, history = train(init_network(ModelConfig(20)), X[:300], Y[:300], X[300:], Y[300:])
    assert predict_and_evaluate(best, X[300:], Y[300:]).mean > 0.9
    # the returned snapshot is the best one observed
    val = multitask_loss(forward(best, X[300:]), Y[300:])
    assert val == pytest.approx(min(h["val_loss"] for h in history), abs=1e-12)


def test_training_is_deterministic():
    X, Y = linear_corpus(60, 5)
    runs = [train(init_network(ModelConfig(5, (8,))), X[:40], Y[:40], X[40:], Y[40:], TrainConfig(max_epochs=20))
            for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert runs[0][0].checksum() == runs[1][0].checksum()


def test_minibatch_training_runs():
    X, Y = linear_corpus(61, 5)
    tc = TrainConfig(max_epochs=15, batch_size=10)
    _, history = train(init_network(ModelConfig(5, (8,))), X[:41], Y[:41], X[41:], Y[41:], tc)
    assert len(history) == 15 and all(np.isfinite(h["train_loss"]) for h in history)


def test_overfits_ten_samples(rng):
    X, Y = rng.standard_normal((10, 29)), rng.uniform(-1, 1, (10, 3))
    best, _ = train(init_network(ModelConfig(29)), X, Y, X, Y)
    assert predict_and_evaluate(best, X, Y).mean > 0.99


def test_untrained_zero_model_is_flagged(rng):
    X, Y = rng.standard_normal((8, 4)), rng.uniform(-1, 1, (8, 3))
    net = fitted(init_network(ModelConfig(4, (3,))), X)
    for k in net.params:
        net.params[k][...] = 0.0
    rep = predict_and_evaluate(net, X, Y)
    assert rep.degenerate_flags == ("valence", "arousal", "dominance")
    assert (rep.valence, rep.arousal, rep.dominance) == (0.0, 0.0, 0.0)


def test_standardizer_ignores_held_out_rows():
    X, Y = linear_corpus(50, 4)
    a, _ = train(init_network(ModelConfig(4, (4,))), X[:30], Y[:30], X[30:], Y[30:], TrainConfig(max_epochs=3, patience=1))
    mutated = X.copy()
    mutated[30:] = mutated[30:] * 1000 + 7
    b, _ = train(init_network(ModelConfig(4, (4,))), X[:30], Y[:30], mutated[30:], Y[30:], TrainConfig(max_epochs=3, patience=1))
    np.testing.assert_array_equal(a.standardizer.mean_, b.standardizer.mean_)
    np.testing.assert_array_equal(a.standardizer.scale_, b.standardizer.scale_)
    np.testing.assert_allclose(a.standardizer.mean_, X[:30].mean(axis=0))


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = ModelConfig(3, (4,), "sequence", "lstm", 5, seed=3)
    X = rng.standard_normal((4, 5, 3))
    net = fitted(init_network(cfg), X)
    save_network(net, tmp_path / "m.json", extra={"feature_set": "lld-sequence"})
    back, extra = load_network(tmp_path / "m.json")
    assert isinstance(back, Network) and back.config == cfg
    assert back.checksum() == net.checksum()
    assert extra == {"feature_set": "lld-sequence"}
    np.testing.assert_array_equal(forward(back, X), forward(net, X))


def test_checkpoint_rejects_foreign_json(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_network(tmp_path / "x.json")


def test_pad_sequences():
    out = pad_sequences([np.ones((2, 3)), np.ones((5, 3)) * 2], 4)
    assert out.shape == (2, 4, 3)
    assert out[0, :2].tolist() == [[1, 1, 1]] * 2 and not out[0, 2:].any()
    assert np.all(out[1] == 2)


def test_estimator_api():
    X, Y = linear_corpus(120, 6)
    est = MultitaskRegressor(hidden=(16,), max_epochs=30, seed=1)
    assert clone(est).get_params() == est.get_params()
    est.fit(X[:100], Y[:100])
    assert est.predict(X[100:]).shape == (20, 3)
    assert est.n_features_in_ == 6
    assert -1 <= est.score(X[100:], Y[100:]) <= 1
    assert len(est.history_) <= 30
    with pytest.raises(ValueError):
        est.predict(X[:, :5])


def test_estimator_sequence_mode():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((12, 4, 3))
    Y = rng.uniform(-1, 1, (12, 3))
    est = MultitaskRegressor(hidden=(4,), cell="lstm", mode="sequence", max_epochs=5, patience=2)
    est.fit(X[:8], Y[:8], X[8:], Y[8:])
    assert est.network_.config.seq_len == 4
    assert est.predict(X).shape == (12, 3)

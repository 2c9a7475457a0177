import json

import numpy as np
import pytest

from gradcheck import max_relative_error
from seasoncast.core import PeriodGrid, inverse_transform, wape
from seasoncast.datagen import SimConfig, simulate_skill
from seasoncast.features import Standardizer, build_design
from seasoncast.neural import (AMSGrad, GRU, LSTM, SimpleRNN, Network, NetworkConfig, NetworkFit,
                               TrainingDiverged, amsgrad_step, dense_layer, gru_step, he_normal_init,
                               lstm_step)
from seasoncast.neural.layers import simple_rnn_step
from seasoncast.neural.training import (choose_epochs, fit_design, forecast_day, layer_param_count,
                                        split_design, train)

G = PeriodGrid()


# -- worked examples ---------------------------------------------------------------

def test_single_node_example():
    h = dense_layer([[0.5323]], [0.4046], [1.0], "tanh", scale=0.5)
    out = dense_layer([[3.3923]], [-0.6354], h)
    assert round(float(out[0]), 3) == 0.847


def test_two_layer_example():
    h1 = dense_layer([[-0.8785, 0.4124]], [-0.3633, -0.0824], [1.0], "tanh", scale=0.5)
    h2 = dense_layer([[-0.7382], [0.3057]], [0.2416], h1, "tanh", scale=0.5)
    out = dense_layer([[4.9517]], [-0.8200], h2)
    assert round(float(out[0]), 3) == 0.843


def test_simple_rnn_state_example():
    s = simple_rnn_step([[0.5323]], [[0.0]], [0.4046], 1.0, 0.0, "tanh", scale=0.5)
    assert round(float(s[0]), 2) == 0.44
    s = simple_rnn_step([[0.0]], [[1.0]], [0.0], 3.0, 0.5, "tanh", scale=0.5)
    assert s[0] == pytest.approx(np.tanh(0.25)) and round(float(s[0]), 4) == 0.2449


def test_relu_passthrough_and_shape_error():
    assert dense_layer([[1.0]], [0.0], [-3.0], "relu")[0] == 0.0
    with pytest.raises(ValueError):
        dense_layer(np.ones((2, 1)), [0.0], [1.0, 2.0, 3.0])


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_zero_weight_cells(act):
    n = 3
    z = {"W": np.zeros((2, 3 * n)), "U": np.zeros((n, 3 * n)), "b": np.zeros(3 * n)}
    assert np.all(simple_rnn_step(np.zeros((2, n)), np.zeros((n, n)), np.zeros(n), [5.0, -2.0],
                                  np.zeros(n), act) == 0)
    np.testing.assert_allclose(gru_step(z, [1.0, 2.0], np.ones(n), act), 0.5)
    np.testing.assert_array_equal(gru_step(z, [1.0, 2.0], np.zeros(n), act), 0.0)
    zl = {"W": np.zeros((2, 4 * n)), "U": np.zeros((n, 4 * n)), "b": np.zeros(4 * n)}
    h, c = lstm_step(zl, [1.0, 2.0], np.zeros(n), np.full(n, 2.0), "tanh")
    np.testing.assert_allclose(c, 1.0)
    np.testing.assert_allclose(h, 0.5 * np.tanh(1.0))
    assert round(float(h[0]), 4) == 0.3808
    h, c = lstm_step(zl, [1.0, 2.0], np.zeros(n), np.zeros(n), act)
    assert np.all(h == 0) and np.all(c == 0)


# -- gradients ------------------------------------------------------------------------

@pytest.mark.parametrize("model_type", ["dense", "simple_rnn", "gru", "lstm"])
def test_backprop_matches_finite_differences(model_type):
    for seed in range(3):
        assert max_relative_error(model_type, seed, width=3, steps=3) < 1e-5


@pytest.mark.parametrize("model_type", ["dense", "simple_rnn", "gru", "lstm"])
def test_backprop_relu_network(model_type):
    # relu kinks are measure-zero; these seeds keep every pre-activation clear of 0 by > eps
    assert max_relative_error(model_type, 11, width=4, steps=4, act="relu") < 1e-4


def test_loss_gradient_includes_l2_on_input_kernels_only():
    rng = np.random.default_rng(0)
    net = Network("gru", 3, 2, 4, seed=1)
    X, y = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4))
    _, g0 = net.loss_and_grads(X, y, 0.0)
    g0 = {k: v.copy() for k, v in g0.items()}
    _, g1 = net.loss_and_grads(X, y, 0.01)
    p = net.named_params()
    for k in g0:
        expect = g0[k] + (0.02 * p[k] if k in ("0.W", "1.W") else 0.0)
        np.testing.assert_allclose(g1[k], expect, atol=1e-14)


# -- init and optimizer -----------------------------------------------------------------

def test_he_normal():
    w = he_normal_init(2, 100_000, seed=0)
    assert w.std() == pytest.approx(1.0, abs=0.02)
    np.testing.assert_array_equal(he_normal_init(7, (3, 4), 5), he_normal_init(7, (3, 4), 5))
    net = Network("lstm", 5, 2, 3, seed=0)
    assert all(np.all(l.params["b"] == 0) for l in net.layers)
    with pytest.raises(ValueError):
        he_normal_init(0, 3)


def test_amsgrad_single_step_oracle():
    lr, decay, b1, b2, eps = 1e-3, 1e-4, 0.9, 0.999, 1e-7
    opt = AMSGrad(lr=lr, decay=decay)
    p = {"w": np.array([0.5])}
    amsgrad_step(opt, p, {"w": np.array([1.0])})
    m, v = (1 - b1) * 1.0, (1 - b2) * 1.0
    lr_t = lr / (1 + decay * 1) * np.sqrt(1 - b2) / (1 - b1)
    assert p["w"][0] == pytest.approx(0.5 - lr_t * m / (np.sqrt(v) + eps), abs=1e-15)
    assert 0.5 - p["w"][0] == pytest.approx(lr, rel=1e-3)


def test_amsgrad_zero_gradient_and_monotone_vhat():
    opt = AMSGrad()
    p = {"w": np.array([1.0, -2.0])}
    opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    rng = np.random.default_rng(0)
    prev = opt.vhat["w"].copy()
    for _ in range(50):
        opt.step(p, {"w": rng.normal(size=2) * rng.uniform(0, 3)})
        assert np.all(opt.vhat["w"] >= prev)
        prev = opt.vhat["w"].copy()


def test_per_epoch_decay_counter():
    opt = AMSGrad(lr=1e-3, decay=1e-4)
    opt.decay_t = 9
    assert opt.effective_lr() == pytest.approx(1e-3 / (1 + 9e-4))


# -- epoch selection -----------------------------------------------------------------------

def test_choose_epochs():
    assert choose_epochs([0.5, 0.4, 0.3, 0.2, 0.3, 0.4, 0.5], 2) == 4
    assert choose_epochs(np.linspace(1, 0.1, 50), 10) == 50
    assert choose_epochs([0.3, 0.2, 0.2, 0.3], 1) == 2  # tie goes to the smaller epoch
    with pytest.raises(TrainingDiverged):
        choose_epochs([0.1, np.nan, 0.2], 2)


# -- structure -------------------------------------------------------------------------------

def test_parameter_counts():
    assert layer_param_count("gru", 43, 25) == 3 * (43 * 25 + 25 * 25 + 25)
    assert layer_param_count("lstm", 43, 25) == 4 * (43 * 25 + 25 * 25 + 25)
    assert layer_param_count("simple_rnn", 43, 25) == 43 * 25 + 25 * 25 + 25
    assert layer_param_count("gru", 10, 5) < layer_param_count("lstm", 10, 5)
    for mt in ("dense", "simple_rnn", "gru", "lstm"):
        net = Network(mt, 43, 2, 25)
        expect = layer_param_count(mt, 43, 25) + layer_param_count(mt, 25, 25) + 26
        assert net.n_params() == expect


@pytest.mark.parametrize("cls,k", [(SimpleRNN, 1), (GRU, 3), (LSTM, 4)])
def test_batched_equals_sequential(cls, k):
    rng = np.random.default_rng(3)
    n, n_in, T = 4, 3, 6
    W, U, b = rng.normal(size=(n_in, k * n)), rng.normal(size=(n, k * n)) * 0.5, rng.normal(size=k * n)
    X = rng.normal(size=(5, T, n_in))
    out = cls(W, U, b, "relu").forward(X)
    for s in range(X.shape[0]):
        h, c = np.zeros(n), np.zeros(n)
        for t in range(T):
            if cls is SimpleRNN:
                h = simple_rnn_step(W, U, b, X[s, t], h, "relu")
            elif cls is GRU:
                h = gru_step({"W": W, "U": U, "b": b}, X[s, t], h, "relu")
            else:
                h, c = lstm_step({"W": W, "U": U, "b": b}, X[s, t], h, c, "relu")
            np.testing.assert_allclose(out[s, t], h, atol=1e-12)


def test_config_validation_and_tags():
    with pytest.raises(ValueError):
        NetworkConfig(model_type="cnn")
    with pytest.raises(ValueError):
        NetworkConfig(kernel_l2=-1)
    assert NetworkConfig("gru").model_tag == "RNN_GRU"
    assert NetworkConfig("gru", mixed_cheat=True).model_tag == "GRU_cheat"
    assert NetworkConfig("dense").model_tag == "NN_Classic"


# -- training --------------------------------------------------------------------------------

def _random_seq(seed=0, days=6, width=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(days, 32, width))
    y = rng.normal(size=(days, 32))
    return X, y


def test_l2_changes_first_epoch_loss_by_penalty_only():
    X, y = _random_seq()
    sc = Standardizer(10.0, 2.0)
    hist = {}
    for l2 in (0.0, 1e-4):
        cfg = NetworkConfig("gru", nnodes=6, kernel_l2=l2, max_epochs=3, ma_window=1, seed=4)
        hist[l2] = train(cfg, X[:4], y[:4], X[4:], y[4:], sc).history["loss"][0]
    net = NetworkConfig("gru", nnodes=6, seed=4).build(5)
    assert hist[1e-4] - hist[0.0] == pytest.approx(net.penalty(1e-4), abs=1e-12)


def test_training_deterministic_and_json_round_trip(tmp_path):
    X, y = _random_seq(1)
    sc = Standardizer(10.0, 2.0)
    cfg = NetworkConfig("lstm", nnodes=5, max_epochs=12, ma_window=3, seed=2)
    a = train(cfg, X[:4], y[:4], X[4:], y[4:], sc)
    b = train(cfg, X[:4], y[:4], X[4:], y[4:], sc)
    assert a.history == b.history and a.chosen_epochs == b.chosen_epochs
    assert 3 <= a.chosen_epochs <= 12
    back = NetworkFit.from_json(a.to_json())
    np.testing.assert_array_equal(back.network.predict(X), a.network.predict(X))
    p = tmp_path / "h.csv"
    a.write_history_csv(p)
    assert p.read_text().splitlines()[0] == "epoch,loss,val_wape"
    assert json.loads(a.to_json())["refit"] is True


@pytest.mark.parametrize("model_type", ["dense", "simple_rnn", "gru", "lstm"])
def test_one_epoch_stays_finite(model_type):
    X, y = _random_seq(2, days=8)
    cfg = NetworkConfig(model_type, nnodes=25, max_epochs=1, ma_window=1, seed=0)
    if model_type == "dense":
        X, y = X.reshape(-1, 5), y.ravel()
    fit = train(cfg, X[:-1], y[:-1], X[-1:], y[-1:], Standardizer(5.0, 1.0))
    assert all(np.all(np.isfinite(v)) for v in fit.network.get_weights().values())


def test_forecast_day_identity_and_floor():
    net = NetworkConfig("dense", nnodes=3).build(4)
    for p in net.named_params().values():
        p[...] = 0.0
    fit = NetworkFit(NetworkConfig("dense", nnodes=3), net, 1, {}, Standardizer(6.0, 1.5))
    rec = forecast_day(fit, np.zeros((32, 4)), "A", 9)
    np.testing.assert_allclose(rec.predictions, inverse_transform(6.0))
    net.layers[-1].params["b"][...] = -50.0
    rec = forecast_day(fit, np.zeros((32, 4)), "A", 9)
    assert np.all(rec.predictions == 0)


def test_split_design_holds_out_last_week():
    s = simulate_skill(SimConfig(n_weeks=6, seed=0))
    d = build_design(s, 1, 25)
    Xt, yt, Xv, yv = split_design(d, G, recurrent=True)
    assert Xt.shape[0] == 15 and Xv.shape[0] == 5
    np.testing.assert_array_equal(Xv.reshape(-1, 43), d.X[-160:])
    Xt, _, Xv, _ = split_design(d, G, recurrent=False)
    assert Xt.shape == (480, 43) and Xv.shape == (160, 43)


def test_gru_learns_noise_free_signal():
    cfg = SimConfig(n_weeks=6, seed=0, sigma_day=0.0, sigma_resid=0.0, volume_scale=5.0)
    s = simulate_skill(cfg)
    d = build_design(s, 1, 25, 26)
    fit = fit_design(NetworkConfig("gru", nnodes=50, seed=0), d, G)
    actual = s.calls_matrix()[s.day_index(26)]
    rec = forecast_day(fit, d.X_target, s.skill, 26, actual)
    assert rec.wape < 0.05

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfposterior import autodiff as ad
from mfposterior.errors import InputShapeError, TrainingDivergenceError
from mfposterior.nn import (AdamState, MlpNet, TrainConfig, adam_step, fit, gradient,
                            mlp_sizes, mse_loss)


def test_layer_count_and_output_dimension():
    net = MlpNet([3, 7, 5, 2], rng=np.random.default_rng(0))
    assert len(net.weights) == 3
    assert net(np.zeros((4, 3))).shape == (4, 2)
    assert net(np.zeros(3)).shape == (2,)


def test_dimension_mismatch_raises():
    with pytest.raises(InputShapeError):
        MlpNet([3, 2])(np.zeros(4))


def test_zero_network_outputs_zero():
    net = MlpNet([2, 5, 3], np.zeros(MlpNet([2, 5, 3]).n_params))
    np.testing.assert_array_equal(net(np.array([0.3, -7.0])), np.zeros(3))


def test_identity_affine_net():
    net = MlpNet([3, 3], np.zeros(12))
    net.weights[0][:] = np.eye(3)
    x = np.array([0.1, -2.0, 5.0])
    np.testing.assert_array_equal(net(x), x)


def test_hand_evaluated_1_2_1_net():
    net = MlpNet([1, 2, 1], np.zeros(7))
    net.weights[0][:] = [[0.5, -1.0]]
    net.biases[0][:] = [0.1, 0.2]
    net.weights[1][:] = [[2.0], [1.0]]
    net.biases[1][:] = [-0.3]
    # 2 tanh(0.35) + tanh(-0.3) - 0.3, evaluated by hand with math.tanh
    assert net(np.array([0.5]))[0] == pytest.approx(0.08143847622107353, abs=1e-15)


def test_glorot_bounds_and_zero_biases():
    net = MlpNet([4, 6, 1], rng=np.random.default_rng(3))
    assert np.all(np.abs(net.weights[0]) <= math.sqrt(6 / 10))
    assert np.all(net.biases[0] == 0) and np.all(net.biases[1] == 0)


def test_constant_loss_gives_zero_gradients():
    net = MlpNet([2, 4, 1], rng=np.random.default_rng(0))
    grads = gradient(net, lambda pred, y: ad.sum(pred * 0.0) + 1.0, (np.ones((3, 2)), np.ones((3, 1))))
    assert all(np.all(g == 0) for g in grads)
    assert [g.shape for g in grads] == [p.shape for p in net.param_arrays()]


def _fd_check(sizes, seed, n=8, h=1e-5):
    rng = np.random.default_rng(seed)
    net = MlpNet(sizes, rng=rng)
    net.theta = net.theta + 0.1 * rng.standard_normal(net.n_params)
    x = rng.standard_normal((n, sizes[0]))
    y = rng.standard_normal((n, sizes[-1]))
    g = np.concatenate([a.ravel() for a in gradient(net, mse_loss, (x, y))])
    theta0 = net.theta.copy()

    def loss(th):
        net.theta = th
        return float(np.mean(np.sum((net(x) - y) ** 2, axis=1)))

    fd = np.array([(loss(theta0 + h * e) - loss(theta0 - h * e)) / (2 * h) for e in np.eye(len(theta0))])
    net.theta = theta0
    big = np.abs(g) > 1e-8
    return np.max(np.abs(fd[big] - g[big]) / np.abs(g[big]).max())


def test_2_4_1_gradient_matches_finite_differences():
    assert _fd_check([2, 4, 1], seed=0) < 1e-5


@settings(max_examples=15, deadline=None)
@given(hidden=st.integers(0, 3), width=st.integers(1, 6), n_in=st.integers(1, 3),
       n_out=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_gradient_check_property(hidden, width, n_in, n_out, seed):
    assert _fd_check(mlp_sizes(n_in, n_out, hidden, width), seed) < 1e-5


def test_adam_zero_gradient_no_decay_is_noop():
    cfg = TrainConfig(weight_decay=0.0)
    p = np.array([1.0, -2.0])
    new, state = adam_step(p, np.zeros(2), AdamState.zeros(2), cfg, 0)
    np.testing.assert_array_equal(new, p)
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    cfg = TrainConfig(learning_rate=0.001, weight_decay=0.0)
    new, _ = adam_step(np.array([0.0]), np.array([1.0]), AdamState.zeros(1), cfg, 0)
    assert new[0] == pytest.approx(-0.001, rel=1e-7)


def test_adam_against_scripted_reference():
    # reference trajectory from a plain-float Adam written independently
    ref = [0.09999999975000001, 0.19983351388429885, 0.29937660795353477, 0.398495104710579,
           0.4970442187049879, 0.5948682698398857, 0.6918005043860823, 0.7876630568721164,
           0.8822670910356916, 0.9754131621746404]
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
    w, state = np.array([0.0]), AdamState.zeros(1)
    dist = []
    for k in range(10):
        w, state = adam_step(w, 2 * (w - 2), state, cfg, k)
        assert w[0] == pytest.approx(ref[k], rel=1e-12)
        dist.append(abs(w[0] - 2))
    assert all(a > b for a, b in zip(dist[1:], dist[2:]))


def test_adam_decoupled_weight_decay():
    cfg = TrainConfig(learning_rate=0.01, weight_decay=0.5)
    new, _ = adam_step(np.array([2.0]), np.array([0.0]), AdamState.zeros(1), cfg, 0)
    assert new[0] == pytest.approx(2.0 - 0.01 * 0.5 * 2.0)


def test_non_finite_gradient_raises_with_epoch():
    with pytest.raises(TrainingDivergenceError) as exc:
        adam_step(np.zeros(1), np.array([np.nan]), AdamState.zeros(1), TrainConfig(), 17)
    assert exc.value.epoch == 17


def test_scheduler_exact():
    cfg = TrainConfig(learning_rate=0.002, scheduler_step=0.99)
    for k in (0, 1, 5, 1000):
        assert cfg.lr_at(k) == 0.002 * 0.99**k


@pytest.mark.parametrize("kw", [{"epochs": 0}, {"learning_rate": 0.0}, {"scheduler_step": 1.5},
                                {"weight_decay": -1.0}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def _regression_run(seed):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (30, 2))
    y = np.sin(x[:, :1]) + x[:, 1:] ** 2
    net = MlpNet([2, 8, 1], rng=np.random.default_rng(seed))

    def lg(theta):
        net.theta = theta
        tape = ad.Tape()
        pv = net.bind(tape)
        loss = mse_loss(net.apply(x, pv), y)
        tape.backward(loss)
        return float(loss.value), net.flatten_grads(pv)

    return fit(net.theta.copy(), lg, TrainConfig(epochs=300, learning_rate=1e-2, seed=seed))


def test_training_reduces_loss_and_is_deterministic():
    th1, h1 = _regression_run(4)
    th2, h2 = _regression_run(4)
    assert h1.loss[-1] < 0.2 * h1.loss[0]
    np.testing.assert_array_equal(th1, th2)
    assert h1.loss == h2.loss


def test_serialization_round_trip_is_exact():
    net = MlpNet([3, 5, 2], rng=np.random.default_rng(9))
    back = MlpNet.from_dict(net.to_dict())
    np.testing.assert_array_equal(back.theta, net.theta)
    assert back.layer_sizes == net.layer_sizes

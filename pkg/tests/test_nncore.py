"""Tests for the training stack: forward/backward, optimizers, data handling."""

import math

import numpy as np
import pytest

from shiftadd.nncore import (
    Dataset,
    Layer,
    ModelParams,
    TrainConfig,
    backward,
    forward,
    init_conv_net,
    init_mlp,
    load_mnist_idx,
    loss_ce,
    lr_at_epoch,
    minibatch_indices,
    sgd_momentum_step,
    synthetic_dataset,
    synthetic_digit_images,
    top1_accuracy,
    train,
    write_idx_files,
)


def finite_difference_grads(model, x, y, eps=1e-4):
    """Central finite differences over every parameter entry."""
    grads = []
    for layer in model.layers:
        dW = np.zeros_like(layer.W)
        it = np.nditer(layer.W, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = layer.W[idx]
            layer.W[idx] = orig + eps
            up = loss_ce(forward(model, x)[1], y)
            layer.W[idx] = orig - eps
            down = loss_ce(forward(model, x)[1], y)
            layer.W[idx] = orig
            dW[idx] = (up - down) / (2 * eps)
            it.iternext()
        db = np.zeros_like(layer.b)
        for i in range(len(layer.b)):
            orig = layer.b[i]
            layer.b[i] = orig + eps
            up = loss_ce(forward(model, x)[1], y)
            layer.b[i] = orig - eps
            down = loss_ce(forward(model, x)[1], y)
            layer.b[i] = orig
            db[i] = (up - down) / (2 * eps)
        grads.append((dW, db))
    return grads


def forward_loops(model, x):
    """Second forward implementation with explicit per-sample loops (oracle)."""
    outs = []
    for sample in x:
        a = sample.copy()
        for layer in model.layers:
            z = np.array([float(np.dot(w_row, a)) + bv for w_row, bv in zip(layer.W, layer.b)])
            a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        outs.append(a)
    return np.array(outs)


class TestForward:
    def test_identity_network_passes_through(self):
        model = ModelParams([Layer(np.eye(4), np.zeros(4), "dense", "identity")])
        x = np.random.default_rng(0).normal(size=(3, 4))
        _, logits = forward(model, x)
        np.testing.assert_array_equal(logits, x)

    def test_relu_clips_negative_preactivation(self):
        model = ModelParams(
            [
                Layer(-np.eye(2), np.zeros(2), "dense", "relu"),
                Layer(np.eye(2), np.zeros(2), "dense", "identity"),
            ]
        )
        _, logits = forward(model, np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(logits, [[0.0, 0.0]])

    def test_matches_loop_oracle(self):
        model = init_mlp([6, 5, 3], seed=1)
        x = np.random.default_rng(2).normal(size=(4, 6))
        _, fast = forward(model, x)
        np.testing.assert_allclose(fast, forward_loops(model, x), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        model = init_mlp([4, 2], seed=0)
        with pytest.raises(ValueError):
            forward(model, np.ones((1, 5)))


class TestLoss:
    def test_uniform_logits(self):
        assert loss_ce(np.array([[0.0, 0.0]]), np.array([0])) == pytest.approx(math.log(2))

    def test_saturated_logits(self):
        assert loss_ce(np.array([[50.0, -50.0]]), np.array([0])) == pytest.approx(0.0, abs=1e-12)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            loss_ce(np.zeros((1, 3)), np.array([3]))


class TestGradients:
    def test_dense_matches_finite_differences(self):
        model = init_mlp([5, 4, 3], seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 5))
        y = rng.integers(0, 3, size=6)
        grads, _ = backward(model, x, y)
        fd = finite_difference_grads(model, x, y)
        for (dW, db), (fW, fb) in zip(grads, fd):
            np.testing.assert_allclose(dW, fW, rtol=1e-4, atol=1e-8)
            np.testing.assert_allclose(db, fb, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("method", ["fk", "pk"])
    def test_conv_matches_finite_differences(self, method):
        model = init_conv_net(2, 5, 3, 2, 4, seed=5, method=method)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3, 2, 5, 5))
        y = rng.integers(0, 4, size=3)
        grads, _ = backward(model, x, y)
        fd = finite_difference_grads(model, x, y)
        for (dW, db), (fW, fb) in zip(grads, fd):
            np.testing.assert_allclose(dW, fW, rtol=1e-4, atol=1e-8)
            np.testing.assert_allclose(db, fb, rtol=1e-4, atol=1e-8)


class TestOptimizers:
    def test_zero_momentum_is_plain_sgd(self):
        p, v = sgd_momentum_step(np.array([1.0]), np.array([2.0]), np.array([0.0]), 0.1, 0.0)
        assert p[0] == pytest.approx(0.8)
        assert v[0] == 2.0

    def test_hand_iterated_updates(self):
        w = np.array([0.0])
        v = np.zeros(1)
        g = np.array([1.0])
        w, v = sgd_momentum_step(w, g, v, 0.1, 0.9)
        assert w[0] == pytest.approx(-0.1)
        w, v = sgd_momentum_step(w, g, v, 0.1, 0.9)
        assert w[0] == pytest.approx(-0.29)

    def test_zero_gradient_keeps_weights(self):
        w = np.array([3.0])
        v = np.zeros(1)
        for _ in range(5):
            w, v = sgd_momentum_step(w, np.zeros(1), v, 0.1, 0.9)
        assert w[0] == 3.0

    def test_lr_schedule(self):
        cfg = TrainConfig(lr=0.001, lr_decay=0.95, decay_interval=10)
        assert lr_at_epoch(cfg, 0) == 0.001
        assert lr_at_epoch(cfg, 9) == 0.001
        assert lr_at_epoch(cfg, 10) == pytest.approx(0.00095)


class TestIdxFiles:
    def test_round_trip(self, tmp_path):
        images, labels = synthetic_digit_images(50, seed=7)
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        write_idx_files(images, labels, ip, lp)
        data = load_mnist_idx(ip, lp)
        assert data.n == 50
        assert data.x.shape == (50, 784)
        assert data.x.max() <= 1.0 and data.x.min() >= 0.0
        np.testing.assert_array_equal(data.y, labels)
        np.testing.assert_array_equal(np.round(data.x * 255), images.reshape(50, -1))

    def test_subset_limit(self, tmp_path):
        images, labels = synthetic_digit_images(30, seed=8)
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        write_idx_files(images, labels, ip, lp)
        assert load_mnist_idx(ip, lp, limit=10).n == 10

    def test_bad_magic(self, tmp_path):
        ip = tmp_path / "img.idx"
        ip.write_bytes(b"\x00\x00\x08\x05" + b"\x00" * 12)
        lp = tmp_path / "lbl.idx"
        lp.write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x00")
        with pytest.raises(ValueError):
            load_mnist_idx(ip, lp)

    def test_truncated_file(self, tmp_path):
        images, labels = synthetic_digit_images(5, seed=9)
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        write_idx_files(images, labels, ip, lp)
        ip.write_bytes(ip.read_bytes()[:-10])
        with pytest.raises(ValueError):
            load_mnist_idx(ip, lp)

    def test_empty_file(self, tmp_path):
        ip = tmp_path / "img.idx"
        ip.write_bytes(b"")
        with pytest.raises(ValueError):
            load_mnist_idx(ip, tmp_path / "missing.idx")


class TestAccuracy:
    def test_constant_predictor_near_chance(self):
        rng = np.random.default_rng(10)
        data = Dataset(rng.normal(size=(2000, 4)), rng.integers(0, 10, size=2000))
        model = ModelParams([Layer(np.zeros((10, 4)), np.zeros(10), "dense", "identity")])
        acc = top1_accuracy(model, data)  # always predicts class 0
        assert abs(acc - 0.1) < 0.03

    def test_memorizer_is_perfect(self):
        x = np.eye(4)
        data = Dataset(x, np.arange(4))
        model = ModelParams([Layer(10.0 * np.eye(4), np.zeros(4), "dense", "identity")])
        assert top1_accuracy(model, data) == 1.0

    def test_empty_dataset(self):
        model = init_mlp([2, 2], seed=0)
        with pytest.raises(ValueError):
            top1_accuracy(model, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int)))


class TestTraining:
    def test_loss_decreases_early(self):
        train_set, _ = synthetic_dataset(600, 0, seed=11)
        model = init_mlp([784, 32, 10], seed=11)
        _, history = train(model, train_set, TrainConfig(epochs=5, seed=11))
        assert history[-1]["loss"] < history[0]["loss"]

    def test_bit_identical_reruns(self):
        train_set, _ = synthetic_dataset(256, 0, seed=12)
        model = init_mlp([784, 16, 10], seed=12)
        cfg = TrainConfig(epochs=2, seed=12)
        m1, h1 = train(model, train_set, cfg)
        m2, h2 = train(model, train_set, cfg)
        assert h1 == h2
        for a, b in zip(m1.layers, m2.layers):
            np.testing.assert_array_equal(a.W, b.W)
            np.testing.assert_array_equal(a.b, b.b)

    def test_adam_runs(self):
        train_set, _ = synthetic_dataset(200, 0, seed=13)
        model = init_mlp([784, 16, 10], seed=13)
        _, history = train(model, train_set, TrainConfig(epochs=2, seed=13, optimizer="adam", lr=0.001))
        assert history[-1]["loss"] < history[0]["loss"]

    def test_group_lasso_prunes_during_training(self):
        train_set, _ = synthetic_dataset(400, 0, seed=14)
        model = init_mlp([784, 16, 10], seed=14)
        cfg = TrainConfig(epochs=10, seed=14, lr=0.01, lam=(0.5, 0.0))
        pruned, _ = train(model, train_set, cfg)
        zero_cols = int(np.sum(np.all(pruned.layers[0].W == 0.0, axis=0)))
        assert zero_cols > 300

    def test_minibatches_cover_everything(self):
        rng = np.random.default_rng(15)
        batches = minibatch_indices(rng, 103, 20)
        assert sorted(np.concatenate(batches).tolist()) == list(range(103))
        assert [len(b) for b in batches] == [20, 20, 20, 20, 20, 3]

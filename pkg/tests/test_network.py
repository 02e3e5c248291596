import numpy as np
import pytest
from numpy.testing import assert_allclose

from lib.errors import NetFormatError, ShapeError, TrainingDivergedError
from lib.network import (
    TrainConfig,
    circulant_from_filter,
    forward,
    init_net,
    jacobian_at,
    layer_output,
    load_net,
    save_net,
    train,
)
from lib.signal_models import DataModelSpec, LabeledBatch


def _regression_batch(rng, d=4, out=2, n=400):
    X = rng.standard_normal((d, n))
    A = rng.standard_normal((out, d))
    return LabeledBatch(inputs=X, targets=A @ X, seed=0, spec=DataModelSpec(kind="noise", dim=d))


class TestConstruction:
    def test_dims_and_activations(self):
        net = init_net([5, 4, 3], ["tanh", "sigmoid"], seed=0)
        assert net.dims == [5, 4, 3]
        assert net.activations == ["tanh", "sigmoid"]
        assert net.weight(2).shape == (3, 4)

    def test_activation_count_mismatch(self):
        with pytest.raises(ShapeError):
            init_net([5, 4, 3], ["tanh"], seed=0)

    def test_layer_index_checked(self):
        net = init_net([3, 2], ["identity"], seed=0)
        with pytest.raises(ValueError):
            net.weight(2)

    def test_renormalized_output_sums_to_one(self, rng):
        net = init_net([6, 5, 4], ["tanh", "sigmoid"], seed=1, renormalize_output=True)
        Y = forward(net, rng.standard_normal((6, 10)))
        assert np.all(Y >= 0)
        assert_allclose(Y.sum(axis=0), 1.0, rtol=1e-12)


class TestTaps:
    def test_layer_output_is_pre_activation(self, rng):
        net = init_net([3, 4, 2], ["tanh", "sigmoid"], seed=2)
        X = rng.standard_normal((3, 5))
        W1, W2 = net.weight(1), net.weight(2)
        assert_allclose(layer_output(net, 2, X), W2 @ np.tanh(W1 @ X), atol=1e-14)

    def test_jacobian_matches_finite_differences(self, rng):
        net = init_net([4, 5, 3], ["tanh", "sigmoid"], seed=3)
        x = rng.standard_normal(4)
        J = jacobian_at(net, 2, x)
        eps = 1e-6
        fd = np.column_stack([
            (layer_output(net, 2, x + eps * e) - layer_output(net, 2, x - eps * e)).ravel() / (2 * eps)
            for e in np.eye(4)
        ])
        assert_allclose(J, fd, rtol=1e-6, atol=1e-9)

    def test_linear_jacobian_is_the_product(self):
        net = init_net([4, 3, 2], ["identity", "identity"], seed=4)
        assert_allclose(jacobian_at(net, 2, np.zeros(4)), net.weight(2) @ net.weight(1), atol=1e-14)


class TestCirculant:
    def test_rows_shift_right(self):
        C = circulant_from_filter([1.0, 2.0, 3.0], 5)
        assert_allclose(C[0], [1, 2, 3, 0, 0])
        assert_allclose(C[1], [0, 1, 2, 3, 0])
        assert_allclose(C[4], [2, 3, 0, 0, 1])

    def test_symmetric_filter_gives_symmetric_matrix(self):
        C = circulant_from_filter([2.0, 1.0, 0.0, 1.0], 4, symmetric=True)
        assert_allclose(C, C.T)

    def test_asymmetric_filter_rejected(self):
        with pytest.raises(ValueError):
            circulant_from_filter([1.0, 2.0], 4, symmetric=True)

    def test_too_long(self):
        with pytest.raises(ShapeError):
            circulant_from_filter(np.ones(6), 5)


class TestTraining:
    def test_loss_decreases(self, rng):
        batch = _regression_batch(rng)
        net = init_net([4, 8, 2], ["tanh", "identity"], seed=5)
        trained, trace = train(net, batch, TrainConfig(epochs=30, batch_size=50, learning_rate=1e-2, seed=0))
        assert trace.size == 31
        assert trace[-1] < 0.7 * trace[0]
        # training works on a copy
        assert_allclose(net.weight(1), init_net([4, 8, 2], ["tanh", "identity"], seed=5).weight(1))

    def test_sgd_on_linear_net(self, rng):
        batch = _regression_batch(rng)
        net = init_net([4, 2], ["identity"], seed=6)
        _, trace = train(net, batch, TrainConfig(epochs=200, learning_rate=0.1, optimizer="sgd", loss="mse"))
        assert trace[-1] < 1e-6

    def test_deterministic(self, rng):
        batch = _regression_batch(rng)
        net = init_net([4, 6, 2], ["relu", "identity"], seed=7)
        cfg = TrainConfig(epochs=5, batch_size=32, seed=3)
        a, _ = train(net, batch, cfg)
        b, _ = train(net, batch, cfg)
        assert_allclose(a.weight(1), b.weight(1), rtol=0, atol=0)

    def test_target_rows_checked(self, rng):
        batch = _regression_batch(rng, out=3)
        with pytest.raises(ShapeError):
            train(init_net([4, 2], ["identity"], seed=0), batch, TrainConfig(epochs=1))

    def test_divergence_reported(self, rng):
        batch = _regression_batch(rng)
        net = init_net([4, 2], ["identity"], seed=0)
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as err:
            train(net, batch, TrainConfig(epochs=500, learning_rate=1e6, optimizer="sgd", loss="mse"))
        assert err.value.epoch >= 1

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lbfgs")


class TestPersistence:
    def test_save_load(self, tmp_out):
        net = init_net([5, 3, 2], ["relu", "sigmoid"], seed=8, renormalize_output=True)
        back = load_net(save_net(net, tmp_out / "net"))
        assert back.dims == net.dims
        assert back.activations == net.activations
        assert back.renormalize_output
        assert_allclose(back.weight(1), net.weight(1), rtol=0, atol=0)

    def test_missing_directory(self, tmp_out):
        with pytest.raises(NetFormatError):
            load_net(tmp_out / "nowhere")

    def test_corrupt_layer_named(self, tmp_out):
        path = save_net(init_net([3, 2, 2], ["tanh", "identity"], seed=0), tmp_out / "net")
        (path / "W2.bin").write_bytes(b"DKMX")
        with pytest.raises(NetFormatError, match="layer 2"):
            load_net(path)

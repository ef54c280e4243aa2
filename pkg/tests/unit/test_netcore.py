"""Unit tests for the feedforward network, tasks and storage."""

import io

import numpy as np
import pytest

from gora_desk.errors import ArtifactFormatError, ConfigError, NonFiniteError, ShapeMismatchError
from gora_desk.netcore import (
    Activation,
    Batch,
    LayerSpec,
    LossKind,
    Network,
    accuracy,
    build_network,
    evaluate_loss,
    forward_backward,
    make_cluster_classification_task,
    make_lowrank_teacher_task,
    predict,
)
from gora_desk.netcore.network import Layer
from gora_desk.netcore.storage import (
    read_batches,
    read_network,
    same_weights,
    write_batches,
    write_network,
)
from gora_desk.numerics import Rng, sample_gaussian


def finite_difference(net, batch, index, h=1e-5):
    weight = net.layers[index].weight
    grad = np.zeros_like(weight)
    for pos in np.ndindex(weight.shape):
        original = weight[pos]
        weight[pos] = original + h
        plus = evaluate_loss(net, batch)
        weight[pos] = original - h
        minus = evaluate_loss(net, batch)
        weight[pos] = original
        grad[pos] = (plus - minus) / (2 * h)
    return grad


def tanh_net(seed, loss=LossKind.MSE, bias=False):
    specs = [
        LayerSpec(in_dim=4, out_dim=6, activation=Activation.TANH),
        LayerSpec(in_dim=6, out_dim=3),
    ]
    return build_network(Rng(seed), specs, loss, bias=bias)


class TestNetwork:
    """Test network construction and validation."""

    def test_build_network_kaiming(self):
        """Test base weights respect the Kaiming bound and are seeded."""
        net = tanh_net(3)
        assert np.all(np.abs(net.layers[0].weight) <= 1 / np.sqrt(4))
        assert same_weights(net, tanh_net(3))
        assert not same_weights(net, tanh_net(4))

    def test_shape_validation(self):
        """Test weight and chaining mismatches are rejected."""
        spec = LayerSpec(in_dim=2, out_dim=3)
        with pytest.raises(ShapeMismatchError):
            Network(layers=[Layer(spec=spec, weight=np.zeros((3, 2)))])
        with pytest.raises(ShapeMismatchError):
            Network(
                layers=[
                    Layer(spec=spec, weight=np.zeros((2, 3))),
                    Layer(spec=LayerSpec(in_dim=4, out_dim=1), weight=np.zeros((4, 1))),
                ]
            )
        with pytest.raises(ShapeMismatchError):
            Network(layers=[])

    def test_freeze_makes_weights_read_only(self):
        """Test frozen weights cannot be written."""
        net = tanh_net(1, bias=True).freeze()
        assert net.frozen
        with pytest.raises(ValueError):
            net.layers[0].weight[0, 0] = 1.0
        with pytest.raises(ValueError):
            net.layers[0].bias[0] = 1.0

    def test_batch_validation(self):
        """Test batches need matching 2-D arrays."""
        with pytest.raises(ShapeMismatchError):
            Batch(inputs=np.ones((3, 2)), targets=np.ones((2, 1)))
        with pytest.raises(ShapeMismatchError):
            Batch(inputs=np.ones(3), targets=np.ones((3, 1)))
        assert Batch(inputs=np.ones((3, 2)), targets=np.ones((3, 1))).size == 3

    def test_batch_must_fit_network(self):
        """Test input width mismatches are reported."""
        net = tanh_net(1)
        with pytest.raises(ShapeMismatchError):
            forward_backward(net, Batch(inputs=np.ones((2, 5)), targets=np.ones((2, 3))))


class TestGradients:
    """Test exact gradients."""

    def test_linear_mse_closed_form(self, rng):
        """Test grad = (2/B) x^T (x W - y) for one linear layer."""
        net = build_network(rng, [LayerSpec(in_dim=5, out_dim=3)])
        x = sample_gaussian(rng.spawn("x"), 8, 5)
        y = sample_gaussian(rng.spawn("y"), 8, 3)
        _, grads = forward_backward(net, Batch(inputs=x, targets=y))
        w = net.layers[0].weight
        np.testing.assert_allclose(grads[0], (2 / 8) * x.T @ (x @ w - y), atol=1e-14)

    def test_zero_inputs_give_zero_grads(self):
        """Test an unbiased net at x = 0 with zero targets has zero gradients."""
        net = tanh_net(2)
        loss, grads = forward_backward(net, Batch(inputs=np.zeros((4, 4)), targets=np.zeros((4, 3))))
        assert loss == 0.0
        for grad in grads:
            assert not np.any(grad)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("loss", list(LossKind))
    def test_matches_finite_differences(self, seed, loss):
        """Test every layer's gradient against central differences."""
        net = tanh_net(seed, loss=loss, bias=True)
        rng = Rng(100 + seed)
        x = sample_gaussian(rng, 6, 4)
        if loss is LossKind.MSE:
            y = sample_gaussian(rng.spawn("y"), 6, 3)
        else:
            y = np.eye(3)[np.arange(6) % 3]
        batch = Batch(inputs=x, targets=y)
        _, grads = forward_backward(net, batch)
        for index in range(len(net.layers)):
            numeric = finite_difference(net, batch, index)
            rel = np.linalg.norm(grads[index] - numeric) / np.linalg.norm(numeric)
            assert rel < 1e-6

    def test_non_finite_loss_is_reported(self):
        """Test diverged inputs raise instead of propagating NaN."""
        net = build_network(Rng(1), [LayerSpec(in_dim=2, out_dim=1)])
        batch = Batch(inputs=np.array([[np.inf, 1.0]]), targets=np.zeros((1, 1)))
        with pytest.raises(NonFiniteError):
            forward_backward(net, batch)
        with pytest.raises(NonFiniteError):
            evaluate_loss(net, batch)

    def test_cross_entropy_uniform_logits(self):
        """Test zero logits give ln(classes)."""
        net = Network(
            layers=[Layer(spec=LayerSpec(in_dim=2, out_dim=4), weight=np.zeros((2, 4)))],
            loss=LossKind.SOFTMAX_CROSS_ENTROPY,
        )
        batch = Batch(inputs=np.ones((3, 2)), targets=np.eye(4)[[0, 1, 2]])
        assert evaluate_loss(net, batch) == pytest.approx(np.log(4))


class TestTasks:
    """Test synthetic task generators."""

    def test_teacher_shapes_and_determinism(self):
        """Test the teacher task layout and seeding."""
        first = make_lowrank_teacher_task(Rng(5), 8, 6, 2, n_samples=64, noise_std=0.1)
        second = make_lowrank_teacher_task(Rng(5), 8, 6, 2, n_samples=64, noise_std=0.1)
        assert len(first.train_batches) == 4
        assert first.network.frozen
        assert np.linalg.matrix_rank(first.delta_star[0]) == 2
        for a, b in zip(first.train_batches, second.train_batches, strict=True):
            assert a.inputs.tobytes() == b.inputs.tobytes()
            assert a.targets.tobytes() == b.targets.tobytes()

    def test_teacher_drops_partial_batch(self):
        """Test samples that do not fill a batch are dropped."""
        task = make_lowrank_teacher_task(Rng(5), 4, 4, 1, n_samples=40, noise_std=0.0)
        assert len(task.train_batches) == 2

    def test_teacher_rejects_bad_rank(self):
        """Test r_true beyond min(m, n) is rejected."""
        with pytest.raises(ConfigError):
            make_lowrank_teacher_task(Rng(1), 4, 3, 4, n_samples=32, noise_std=0.0)

    def test_zero_rank_teacher_is_base(self):
        """Test r_true = 0 leaves the base optimal up to noise."""
        task = make_lowrank_teacher_task(Rng(2), 8, 8, 0, n_samples=64, noise_std=0.0)
        assert not np.any(task.delta_star[0])
        assert evaluate_loss(task.network, task.eval_batch) == pytest.approx(0.0, abs=1e-20)

    def test_full_rank_noiseless_fit(self):
        """Test W0 + dW* reproduces noiseless targets exactly."""
        task = make_lowrank_teacher_task(Rng(3), 6, 6, 6, n_samples=64, noise_std=0.0)
        weight = task.network.layers[0].weight + task.delta_star[0]
        output = task.eval_batch.inputs @ weight
        np.testing.assert_allclose(output, task.eval_batch.targets, atol=1e-12)

    def test_best_rank_four_fit_near_noise_floor(self, teacher_task):
        """Test the least-squares rank-4 update reaches 2x the noise floor."""
        x = np.vstack([b.inputs for b in teacher_task.train_batches])
        y = np.vstack([b.targets for b in teacher_task.train_batches])
        w0 = teacher_task.network.layers[0].weight
        w_ls = np.linalg.lstsq(x, y, rcond=None)[0]
        u, s, vt = np.linalg.svd(w_ls - w0)
        delta4 = (u[:, :4] * s[:4]) @ vt[:4]
        residual = teacher_task.eval_batch.inputs @ (w0 + delta4) - teacher_task.eval_batch.targets
        mse = np.sum(residual**2) / residual.shape[0]
        floor = 32 * 0.01**2
        assert mse <= 2 * floor

    def test_hetero_teacher_layers(self, hetero_task):
        """Test the three-layer teacher shapes."""
        shapes = [layer.weight.shape for layer in hetero_task.network.layers]
        assert shapes == [(32, 40), (40, 40), (40, 32)]
        norms = [np.linalg.norm(d) for d in hetero_task.delta_star]
        assert norms[2] > norms[0]

    def test_clusters_separable(self):
        """Test two well-separated clusters are linearly separable."""
        task = make_cluster_classification_task(Rng(4), dims=8, classes=2, n_samples=512)
        x = np.vstack([b.inputs for b in task.train_batches])
        y = np.vstack([b.targets for b in task.train_batches])
        distances = ((x[:, None, :] - task.means[None, :, :]) ** 2).sum(axis=2)
        assert np.mean(distances.argmin(axis=1) == y.argmax(axis=1)) >= 0.99
        assert task.network.loss is LossKind.SOFTMAX_CROSS_ENTROPY
        assert 0.0 <= accuracy(task.network, task.eval_batch) <= 1.0

    def test_clusters_balanced_and_deterministic(self):
        """Test balanced labels and seed determinism."""
        first = make_cluster_classification_task(Rng(6), dims=4, classes=4, n_samples=64)
        second = make_cluster_classification_task(Rng(6), dims=4, classes=4, n_samples=64)
        y = np.vstack([b.targets for b in first.train_batches])
        np.testing.assert_array_equal(y.sum(axis=0), [16, 16, 16, 16])
        assert first.train_batches[0].inputs.tobytes() == second.train_batches[0].inputs.tobytes()

    def test_clusters_reject_single_class(self):
        """Test a single class is rejected."""
        with pytest.raises(ConfigError):
            make_cluster_classification_task(Rng(1), dims=4, classes=1, n_samples=32)


class TestStorage:
    """Test GNET and GBAT containers."""

    def test_network_round_trip(self):
        """Test specs, weights and biases survive serialization."""
        net = tanh_net(8, loss=LossKind.SOFTMAX_CROSS_ENTROPY, bias=True)
        stream = io.BytesIO()
        write_network(stream, net)
        stream.seek(0)
        loaded = read_network(stream)
        assert loaded.specs == net.specs
        assert loaded.loss is LossKind.SOFTMAX_CROSS_ENTROPY
        assert same_weights(loaded, net)
        x = sample_gaussian(Rng(1), 3, 4)
        assert predict(loaded, x).tobytes() == predict(net, x).tobytes()

    def test_batches_round_trip(self, teacher_task):
        """Test batch lists survive serialization bit-exactly."""
        stream = io.BytesIO()
        write_batches(stream, teacher_task.train_batches[:3])
        stream.seek(0)
        loaded = read_batches(stream)
        assert len(loaded) == 3
        assert loaded[2].targets.tobytes() == teacher_task.train_batches[2].targets.tobytes()

    def test_bad_magic(self):
        """Test a batch file is not accepted as a network."""
        stream = io.BytesIO()
        write_batches(stream, [])
        stream.seek(0)
        with pytest.raises(ArtifactFormatError):
            read_network(stream)

"""Second-order network pruning with WoodFisher inverse estimates."""

import math

import numpy as np
import pytest

from woodprune import (
    Dataset,
    Mask,
    MlpModel,
    TrainConfig,
    WoodPruneNumericError,
    WoodPruneStructuralError,
    WoodPruneTrainingError,
    loss_and_grad,
    sample_label,
    sgd_train,
    synth_gaussian_classes,
)
from woodprune.model import (
    accuracy,
    batch_loss_and_grad,
    mean_loss,
    per_example_grads,
    sample_labels,
    sgd_epoch,
)
from woodprune.oracle import fd_gradient


def _random_batch(
    model: MlpModel,
    count: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    inputs = rng.standard_normal((count, model.layer_sizes[0]))
    labels = rng.integers(0, model.num_classes, size=count)
    return inputs, labels


def test_initialize() -> None:
    """Test Glorot initialization with zero biases."""
    model = MlpModel.initialize((5, 4, 3), seed=3)
    (weight1, bias1), (weight2, bias2) = model.weights()
    assert weight1.shape == (5, 4)
    assert weight2.shape == (4, 3)
    assert not bias1.any()
    assert not bias2.any()
    assert np.abs(weight1).max() <= math.sqrt(6.0 / 9.0)
    assert np.array_equal(model.values, MlpModel.initialize((5, 4, 3), 3).values)
    assert not np.array_equal(model.values, MlpModel.initialize((5, 4, 3), 4).values)


def test_from_values_checks_length() -> None:
    """Test a parameter vector must match the architecture."""
    with pytest.raises(WoodPruneStructuralError):
        MlpModel.from_values((3, 2), np.zeros(7))


def test_zero_weights_uniform_loss() -> None:
    """Test a network with zero weights predicts the uniform distribution."""
    model = MlpModel.from_values((784, 40, 20, 10), np.zeros(32430))
    inputs = np.random.default_rng(0).random(784)
    loss, grad = loss_and_grad(model, (inputs, 7))
    assert loss == pytest.approx(math.log(10.0), abs=1e-12)
    assert grad.shape == (32430,)
    assert np.all(np.isfinite(grad))


def test_gradient_matches_finite_differences() -> None:
    """Test the analytic gradient against central differences in every layer."""
    model = MlpModel.initialize((5, 6, 4, 3), seed=0)
    inputs, labels = _random_batch(model, 4, seed=1)
    _, grad = batch_loss_and_grad(model, inputs, labels)
    rng = np.random.default_rng(2)
    for segment in model.layout.segments:
        count = min(20, segment.length)
        indices = segment.offset + rng.choice(segment.length, count, replace=False)
        numeric = fd_gradient(
            lambda values: mean_loss(model.with_values(values), inputs, labels),
            model.values,
            indices=indices.tolist(),
        )
        analytic = grad[indices]
        error = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
        assert error.max() < 1e-4, segment.name


def test_single_example_gradient() -> None:
    """Test the same example always gives the same gradient."""
    model = MlpModel.initialize((5, 6, 3), seed=0)
    inputs, labels = _random_batch(model, 1, seed=1)
    first = loss_and_grad(model, (inputs[0], int(labels[0])))
    second = loss_and_grad(model, (inputs[0], int(labels[0])))
    assert first[0] == second[0]
    assert np.array_equal(first[1], second[1])
    batch_loss, batch_grad = batch_loss_and_grad(model, inputs, labels)
    assert batch_loss == pytest.approx(first[0], rel=1e-12)
    np.testing.assert_allclose(batch_grad, first[1], rtol=1e-12, atol=1e-15)


def test_per_example_grads_average() -> None:
    """Test per-example gradients average to the batch gradient."""
    model = MlpModel.initialize((5, 6, 3), seed=0)
    inputs, labels = _random_batch(model, 7, seed=4)
    losses, grads = per_example_grads(model, inputs, labels)
    loss, grad = batch_loss_and_grad(model, inputs, labels)
    assert grads.shape == (7, model.space.size)
    assert losses.mean() == pytest.approx(loss, rel=1e-12)
    np.testing.assert_allclose(grads.mean(axis=0), grad, rtol=1e-10, atol=1e-14)
    for number in (0, 6):
        _, single = loss_and_grad(model, (inputs[number], int(labels[number])))
        np.testing.assert_allclose(grads[number], single, rtol=1e-10, atol=1e-13)


def test_input_width_mismatch() -> None:
    """Test inputs of the wrong width are rejected."""
    model = MlpModel.initialize((5, 3), seed=0)
    with pytest.raises(WoodPruneStructuralError, match="expected"):
        loss_and_grad(model, (np.zeros(4), 0))


def test_label_out_of_range() -> None:
    """Test labels must name an output class."""
    model = MlpModel.initialize((5, 3), seed=0)
    with pytest.raises(WoodPruneStructuralError, match="labels"):
        loss_and_grad(model, (np.zeros(5), 3))


def test_non_finite_activations_name_layer() -> None:
    """Test overflowing activations report their layer."""
    model = MlpModel.initialize((2, 3, 2), seed=0)
    values = model.values.copy()
    values[:6] = 1e308
    with (
        np.errstate(over="ignore", invalid="ignore"),
        pytest.raises(WoodPruneNumericError, match="fc1"),
    ):
        loss_and_grad(model.with_values(values), (np.array([10.0, 10.0]), 0))


def test_sample_label_dominant_class() -> None:
    """Test a large logit margin almost always yields its class."""
    values = np.zeros(36)
    values[26 + 3] = 100.0
    model = MlpModel.from_values((2, 2, 10), values)
    labels = sample_labels(
        model, np.zeros((10_000, 2)), np.random.default_rng(0)
    )
    assert np.mean(labels == 3) > 0.999


def test_sample_label_uniform() -> None:
    """Test zero logits give uniform label frequencies."""
    model = MlpModel.from_values((2, 2, 10), np.zeros(36))
    draws = 100_000
    labels = sample_labels(model, np.zeros((draws, 2)), np.random.default_rng(1))
    counts = np.bincount(labels, minlength=10)
    bound = 5 * math.sqrt(draws * 0.1 * 0.9)
    assert np.all(np.abs(counts - draws / 10) < bound)


def test_sample_label_deterministic() -> None:
    """Test a fixed generator seed gives a fixed label sequence."""
    model = MlpModel.initialize((3, 4, 10), seed=0)
    inputs = np.random.default_rng(0).standard_normal(3)
    label = sample_label(model, inputs, np.random.default_rng(5))
    assert label == sample_label(model, inputs, np.random.default_rng(5))
    assert 0 <= label < 10
    batch = np.tile(inputs, (50, 1))
    assert np.array_equal(
        sample_labels(model, batch, np.random.default_rng(6)),
        sample_labels(model, batch, np.random.default_rng(6)),
    )


def test_zero_epochs_is_noop() -> None:
    """Test training for zero epochs leaves the model unchanged."""
    model = MlpModel.initialize((2, 3, 2), seed=0)
    data = synth_gaussian_classes(2, 10, 2, 4.0, seed=0)
    trained, metrics = sgd_train(model, data, TrainConfig(epochs=0))
    assert trained is model
    assert metrics == []


def _logistic_fit(data: Dataset, iterations: int = 2000) -> np.ndarray:
    """Fit a binary logistic regression by full-batch gradient descent."""
    features = np.hstack([data.inputs, np.ones((len(data), 1))])
    targets = data.labels.astype(np.float64)
    coefficients = np.zeros(features.shape[1])
    for _ in range(iterations):
        probabilities = 1.0 / (1.0 + np.exp(-features @ coefficients))
        coefficients -= 0.1 * features.T @ (probabilities - targets) / len(data)
    return (features @ coefficients > 0).astype(np.int64)


def test_linear_model_separates() -> None:
    """Test a linear model fits well separated classes perfectly."""
    data = synth_gaussian_classes(2, 20, 2, 10.0, seed=0)
    assert np.array_equal(_logistic_fit(data), data.labels)
    model = MlpModel.initialize((2, 2), seed=0)
    cfg = TrainConfig(learning_rate=0.05, epochs=50, batch_size=8)
    trained, metrics = sgd_train(model, data, cfg, test=data)
    assert accuracy(trained, data) == 1.0
    assert len(metrics) == 50
    assert metrics[-1].test_accuracy == 1.0
    assert metrics[-1].train_loss < metrics[0].train_loss


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_first_epoch_lowers_loss(seed: int) -> None:
    """Test one epoch at the default learning rate lowers the training loss."""
    data = synth_gaussian_classes(2, 50, 2, 6.0, seed=seed)
    model = MlpModel.initialize((2, 8, 2), seed=seed)
    cfg = TrainConfig(learning_rate=0.005, epochs=1, batch_size=4, seed=seed)
    trained, _ = sgd_train(model, data, cfg)
    before = mean_loss(model, data.inputs, data.labels)
    assert mean_loss(trained, data.inputs, data.labels) < before


def test_training_is_deterministic() -> None:
    """Test the same seed gives bit-identical weights."""
    data = synth_gaussian_classes(3, 10, 4, 3.0, seed=2)
    model = MlpModel.initialize((4, 5, 3), seed=2)
    cfg = TrainConfig(epochs=3, batch_size=7, seed=2)
    first, _ = sgd_train(model, data, cfg)
    second, _ = sgd_train(model, data, cfg)
    assert np.array_equal(first.values, second.values)


def test_masked_weight_stays_zero() -> None:
    """Test a pruned weight is exactly zero after every epoch."""
    data = synth_gaussian_classes(3, 10, 4, 3.0, seed=2)
    model = MlpModel.initialize((4, 5, 3), seed=2)
    mask = Mask.dense(model.space).with_removed([0])
    cfg = TrainConfig(learning_rate=0.05, epochs=1, batch_size=5)
    velocity = np.zeros(model.space.size)
    for epoch in range(4):
        model, loss = sgd_epoch(
            model,
            data,
            cfg,
            mask,
            velocity,
            epoch=epoch,
            learning_rate=cfg.learning_rate,
        )
        assert model.values[0] == 0.0
        assert velocity[0] == 0.0
        assert loss > 0
    assert np.count_nonzero(model.values[1:20]) == 19


def test_divergence_raises() -> None:
    """Test an absurd learning rate ends in a training error."""
    data = synth_gaussian_classes(2, 10, 2, 4.0, seed=0)
    model = MlpModel.initialize((2, 4, 2), seed=0)
    cfg = TrainConfig(learning_rate=1e300, epochs=2, batch_size=4)
    with (
        np.errstate(all="ignore"),
        pytest.raises(WoodPruneTrainingError, match="diverged"),
    ):
        sgd_train(model, data, cfg)


def test_accuracy_of_empty_dataset() -> None:
    """Test accuracy over no examples is zero."""
    model = MlpModel.initialize((2, 2), seed=0)
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    assert accuracy(model, empty) == 0.0

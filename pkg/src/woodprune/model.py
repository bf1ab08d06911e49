"""Fully-connected classifier with manual forward and backward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .const import LOGGER, RngStream
from .core import LayerLayout, Mask, ParamSpace, rng_for
from .exceptions import (
    WoodPruneNumericError,
    WoodPruneStructuralError,
    WoodPruneTrainingError,
)
from .models import EpochMetrics, TrainConfig

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from .io import Dataset

    FloatArray = NDArray[np.float64]
    IntArray = NDArray[np.int64]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """ReLU network with a softmax cross-entropy head."""

    layer_sizes: tuple[int, ...]
    space: ParamSpace

    def __post_init__(self) -> None:
        """Check that the parameter layout matches the layer sizes."""
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        if self.space.layout != LayerLayout.for_mlp(self.layer_sizes):
            msg = f"parameter layout does not match layer sizes {self.layer_sizes}"
            raise WoodPruneStructuralError(msg)

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], seed: int) -> MlpModel:
        """Create a network with Glorot-uniform weights and zero biases.

        Args:
        ----
            layer_sizes: Width of every layer, input first, e.g. 784, 40, 20, 10.
            seed: Run seed; the weights come from its initialization stream.

        Returns:
        -------
            The freshly initialized model.

        """
        layout = LayerLayout.for_mlp(layer_sizes)
        rng = rng_for(seed, RngStream.INIT)
        arrays: list[FloatArray] = []
        for segment in layout:
            if segment.prunable:
                limit = np.sqrt(6.0 / (segment.fan_in + segment.fan_out))
                arrays.append(rng.uniform(-limit, limit, size=segment.shape))
            else:
                arrays.append(np.zeros(segment.shape))
        return cls(tuple(layer_sizes), ParamSpace(layout.flatten(arrays), layout))

    @classmethod
    def from_values(cls, layer_sizes: Sequence[int], values: FloatArray) -> MlpModel:
        """Create a network from a flat parameter vector."""
        layout = LayerLayout.for_mlp(layer_sizes)
        return cls(tuple(layer_sizes), ParamSpace(np.asarray(values), layout))

    @property
    def layout(self) -> LayerLayout:
        """Layout of the flat parameter vector."""
        return self.space.layout

    @property
    def values(self) -> FloatArray:
        """Flat parameter vector."""
        return self.space.values

    @property
    def num_classes(self) -> int:
        """Number of output classes."""
        return self.layer_sizes[-1]

    def with_values(self, values: FloatArray) -> MlpModel:
        """Return the same architecture with new parameter values."""
        return MlpModel(self.layer_sizes, self.space.with_values(values))

    def weights(self) -> list[tuple[FloatArray, FloatArray]]:
        """Return (weight, bias) pairs, weights shaped (fan_in, fan_out)."""
        arrays = self.layout.unflatten(self.values)
        return list(zip(arrays[0::2], arrays[1::2], strict=True))


def _check_inputs(model: MlpModel, inputs: FloatArray) -> FloatArray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.ndim != 2 or inputs.shape[1] != model.layer_sizes[0]:
        msg = (
            f"inputs have shape {inputs.shape}, expected (n, {model.layer_sizes[0]})"
        )
        raise WoodPruneStructuralError(msg)
    return inputs


def _forward(
    model: MlpModel,
    inputs: FloatArray,
) -> tuple[list[FloatArray], list[FloatArray]]:
    """Run the forward pass, keeping every activation and pre-activation."""
    activations = [inputs]
    preactivations: list[FloatArray] = []
    pairs = model.weights()
    for number, (weight, bias) in enumerate(pairs, start=1):
        z = activations[-1] @ weight + bias
        if not np.all(np.isfinite(z)):
            msg = f"non-finite activations in layer fc{number}"
            raise WoodPruneNumericError(msg)
        preactivations.append(z)
        if number < len(pairs):
            activations.append(np.maximum(z, 0.0))
    return activations, preactivations


def _log_softmax(logits: FloatArray) -> FloatArray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(model: MlpModel, labels: IntArray, count: int) -> IntArray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape != (count,):
        msg = f"expected {count} labels, got {labels.shape[0]}"
        raise WoodPruneStructuralError(msg)
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        msg = f"labels must lie in [0, {model.num_classes})"
        raise WoodPruneStructuralError(msg)
    return labels


def _backward(
    model: MlpModel,
    inputs: FloatArray,
    labels: IntArray,
    *,
    per_example: bool,
) -> tuple[FloatArray, FloatArray]:
    """Return per-example losses and either per-example or mean gradients."""
    inputs = _check_inputs(model, inputs)
    labels = _check_labels(model, labels, inputs.shape[0])
    count = inputs.shape[0]
    activations, preactivations = _forward(model, inputs)
    log_probs = _log_softmax(preactivations[-1])
    losses = -log_probs[np.arange(count), labels]

    delta = np.exp(log_probs)
    delta[np.arange(count), labels] -= 1.0
    pieces: list[FloatArray] = []
    pairs = model.weights()
    for layer in range(len(pairs) - 1, -1, -1):
        previous = activations[layer]
        if per_example:
            pieces.append(delta)
            pieces.append(
                (previous[:, :, None] * delta[:, None, :]).reshape(count, -1)
            )
        else:
            pieces.append(delta.mean(axis=0)[None, :])
            pieces.append((previous.T @ delta / count).reshape(1, -1))
        if layer:
            delta = (delta @ pairs[layer][0].T) * (preactivations[layer - 1] > 0)
    # Pieces were collected back to front as (bias, weight) pairs.
    grads = np.concatenate(pieces[::-1], axis=1)
    return losses, grads


def loss_and_grad(
    model: MlpModel,
    example: tuple[FloatArray, int],
) -> tuple[float, FloatArray]:
    """Return the cross-entropy loss of one example and its gradient.

    Args:
    ----
        model: The network.
        example: An (input vector, label) pair.

    Returns:
    -------
        The loss (non-negative) and the gradient, a vector of length d.

    Raises:
    ------
        WoodPruneNumericError: Activations became non-finite; the message
            names the layer.
        WoodPruneStructuralError: The input width does not match the model.

    """
    inputs, label = example
    losses, grads = _backward(
        model, np.asarray(inputs)[None, :], np.array([label]), per_example=False
    )
    return float(losses[0]), grads[0]


def batch_loss_and_grad(
    model: MlpModel,
    inputs: FloatArray,
    labels: IntArray,
) -> tuple[float, FloatArray]:
    """Return the mean loss over a batch and the gradient of that mean."""
    losses, grads = _backward(model, inputs, labels, per_example=False)
    return float(losses.mean()), grads[0]


def per_example_grads(
    model: MlpModel,
    inputs: FloatArray,
    labels: IntArray,
) -> tuple[FloatArray, FloatArray]:
    """Return per-example losses (n,) and gradients (n, d)."""
    return _backward(model, inputs, labels, per_example=True)


def predict_proba(model: MlpModel, inputs: FloatArray) -> FloatArray:
    """Return the softmax class probabilities of a batch."""
    _, preactivations = _forward(model, _check_inputs(model, inputs))
    return np.exp(_log_softmax(preactivations[-1]))


def mean_loss(model: MlpModel, inputs: FloatArray, labels: IntArray) -> float:
    """Return the mean cross-entropy over a batch."""
    inputs = _check_inputs(model, inputs)
    labels = _check_labels(model, labels, inputs.shape[0])
    _, preactivations = _forward(model, inputs)
    log_probs = _log_softmax(preactivations[-1])
    return float(-log_probs[np.arange(labels.shape[0]), labels].mean())


def accuracy(model: MlpModel, dataset: Dataset) -> float:
    """Return the fraction of correctly classified examples."""
    if len(dataset) == 0:
        return 0.0
    _, preactivations = _forward(model, _check_inputs(model, dataset.inputs))
    return float(np.mean(preactivations[-1].argmax(axis=1) == dataset.labels))


def sample_labels(
    model: MlpModel,
    inputs: FloatArray,
    rng: np.random.Generator,
) -> IntArray:
    """Draw one label per input from the model's softmax distribution."""
    probabilities = predict_proba(model, inputs)
    cumulative = np.cumsum(probabilities, axis=1)
    draws = rng.random(probabilities.shape[0])[:, None] * cumulative[:, -1:]
    labels = (cumulative <= draws).sum(axis=1)
    return np.minimum(labels, model.num_classes - 1).astype(np.int64)


def sample_label(
    model: MlpModel,
    inputs: FloatArray,
    rng: np.random.Generator,
) -> int:
    """Draw a single label for one input from the model's softmax."""
    return int(sample_labels(model, np.asarray(inputs)[None, :], rng)[0])


def sgd_epoch(  # noqa: PLR0913
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    mask: Mask,
    velocity: FloatArray,
    *,
    epoch: int,
    learning_rate: float,
) -> tuple[MlpModel, float]:
    """Run one epoch of masked momentum SGD.

    `velocity` is updated in place. Pruned weights receive neither gradient
    nor weight decay and are reset to exactly zero after every step.

    Returns
    -------
        The updated model and the mean training loss over the epoch.

    Raises
    ------
        WoodPruneTrainingError: The loss or the weights became non-finite.

    """
    active = mask.active
    values = np.where(active, model.values, 0.0)
    order = rng_for(cfg.seed, RngStream.TRAIN_SHUFFLE, epoch).permutation(len(data))
    losses: list[float] = []
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        try:
            loss, grad = batch_loss_and_grad(
                model.with_values(values), data.inputs[batch], data.labels[batch]
            )
        except WoodPruneNumericError as exception:
            msg = f"training diverged in epoch {epoch}: {exception}"
            raise WoodPruneTrainingError(msg) from exception
        if not np.isfinite(loss):
            msg = f"training diverged in epoch {epoch}: loss is {loss}"
            raise WoodPruneTrainingError(msg)
        losses.append(loss)
        step = np.where(active, grad + cfg.weight_decay * values, 0.0)
        velocity *= cfg.momentum
        velocity += step
        values = np.where(active, values - learning_rate * velocity, 0.0)
    if not np.all(np.isfinite(values)):
        msg = f"training diverged in epoch {epoch}: non-finite weights"
        raise WoodPruneTrainingError(msg)
    return model.with_values(values), float(np.mean(losses)) if losses else 0.0


def sgd_train(
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    mask: Mask | None = None,
    *,
    test: Dataset | None = None,
) -> tuple[MlpModel, list[EpochMetrics]]:
    """Train the network with masked momentum SGD.

    Args:
    ----
        model: The network to train.
        data: Training examples.
        cfg: Training hyperparameters.
        mask: Pruning mask; pruned weights stay exactly zero throughout.
        test: Optional held-out set evaluated after every epoch.

    Returns:
    -------
        The trained model and the per-epoch metrics.

    """
    mask = mask or Mask.dense(model.space)
    mask.check(model.space)
    if cfg.epochs == 0:
        return model, []
    velocity = np.zeros(model.space.size)
    trace: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        model, train_loss = sgd_epoch(
            model,
            data,
            cfg,
            mask,
            velocity,
            epoch=epoch,
            learning_rate=cfg.learning_rate,
        )
        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=train_loss,
            test_accuracy=accuracy(model, test) if test is not None else None,
            learning_rate=cfg.learning_rate,
        )
        LOGGER.info(
            "Epoch %d: train loss %.4f, test accuracy %s",
            epoch,
            train_loss,
            metrics.test_accuracy,
        )
        trace.append(metrics)
    return model, trace

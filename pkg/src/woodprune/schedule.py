"""Gradual pruning with a cubic sparsity schedule."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .const import LOGGER, PruneMethod, PruneScope
from .core import Mask, sparsity_of
from .exceptions import WoodPruneConfigError
from .model import accuracy, sgd_epoch
from .models import (
    FisherConfig,
    GradualTrace,
    ScheduleConfig,
    TraceRow,
    TrainConfig,
)
from .pruner import Pruner

if TYPE_CHECKING:
    from collections.abc import Mapping

    from .io import Dataset
    from .model import MlpModel


def sparsity_at(cfg: ScheduleConfig, step: int, steps: int) -> float:
    """Return the target sparsity of pruning step `step` out of `steps`.

    s(k) = s_f + (s_i - s_f) (1 - k / K)^3, which starts at s_i, ends at s_f
    exactly and never decreases.

    Raises
    ------
        WoodPruneConfigError: K is 0 while s_i differs from s_f, or k lies
            outside [0, K].

    """
    if steps == 0:
        if cfg.initial_sparsity != cfg.final_sparsity:
            msg = "a schedule with a single pruning step needs s_i == s_f"
            raise WoodPruneConfigError(msg)
        return cfg.final_sparsity
    if not 0 <= step <= steps:
        msg = f"pruning step {step} lies outside [0, {steps}]"
        raise WoodPruneConfigError(msg)
    if step == steps:
        return cfg.final_sparsity
    remaining = 1.0 - step / steps
    return cfg.final_sparsity + (
        cfg.initial_sparsity - cfg.final_sparsity
    ) * remaining**3


def learning_rate_at(cfg: ScheduleConfig, base: float, epoch: int) -> float:
    """Return the learning rate of an epoch under exponential decay.

    From the decay start epoch on, the rate is multiplied by `factor` once
    every `period` epochs.
    """
    decay, start = cfg.lr_decay, cfg.lr_decay_start
    if epoch < start:
        return base
    return base * decay.factor ** ((epoch - start) // decay.period + 1)


def gradual_prune(  # noqa: PLR0913
    model: MlpModel,
    dataset: Dataset,
    fisher: FisherConfig,
    schedule: ScheduleConfig,
    method: PruneMethod,
    scope: PruneScope,
    *,
    train: TrainConfig,
    test: Dataset | None = None,
    mask: Mask | None = None,
    threads: int = 1,
    beta: float = 0.0,
    dense_flops: Mapping[str, float] | None = None,
) -> tuple[MlpModel, GradualTrace]:
    """Alternate scheduled pruning steps with masked SGD retraining.

    At every scheduled epoch the curvature is re-estimated on the current
    model from a fresh draw of examples and the model is pruned to the
    scheduled sparsity; every epoch then runs one epoch of masked SGD.

    Args:
    ----
        model: The (partially) trained network.
        dataset: Training examples, also used for curvature estimates.
        fisher: Fisher settings.
        schedule: Sparsity and learning rate schedule.
        method: Pruning statistic.
        scope: Joint or independent selection.
        train: SGD hyperparameters; `train.seed` seeds every stream.
        test: Optional held-out set evaluated after every epoch.
        mask: Starting mask; pruned weights of the model when omitted.
        threads: Worker threads for the chunk builds.
        beta: FLOPs exponent for the statistic.
        dense_flops: Optional per-layer dense FLOP cost overrides.

    Returns:
    -------
        The final model and the per-epoch trace.

    """
    pruner = Pruner(
        method=method,
        scope=scope,
        fisher=fisher,
        seed=train.seed,
        threads=threads,
        beta=beta,
        dense_flops=dense_flops,
    )
    mask = mask or Mask.from_zeros(model.space)
    model = model.with_values(np.where(mask.active, model.values, 0.0))
    prune_epochs = schedule.prune_epochs
    steps = len(prune_epochs) - 1
    velocity = np.zeros(model.space.size)
    trace = GradualTrace()
    for epoch in range(schedule.total_epochs):
        if epoch in prune_epochs:
            target = sparsity_at(schedule, prune_epochs.index(epoch), steps)
            target = max(target, sparsity_of(mask, model.space))
            model, mask, predicted = pruner.prune(
                model, dataset, mask, target, key=epoch
            )
            # Momentum of pruned weights must not carry over.
            velocity[~mask.active] = 0.0
            LOGGER.info(
                "Epoch %d: pruned to %.4f (predicted loss increase %.4g)",
                epoch,
                sparsity_of(mask, model.space),
                predicted,
            )
        learning_rate = learning_rate_at(schedule, train.learning_rate, epoch)
        model, train_loss = sgd_epoch(
            model,
            dataset,
            train,
            mask,
            velocity,
            epoch=epoch,
            learning_rate=learning_rate,
        )
        trace.rows.append(
            TraceRow(
                epoch=epoch,
                sparsity=sparsity_of(mask, model.space),
                train_loss=train_loss,
                test_accuracy=accuracy(model, test) if test is not None else None,
                learning_rate=learning_rate,
            )
        )
    return model, trace

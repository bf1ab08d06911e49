"""Models for WoodPrune."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

from mashumaro import field_options
from mashumaro.config import BaseConfig
from mashumaro.mixins.orjson import DataClassORJSONMixin

from .const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_DAMP,
    DEFAULT_FIRST_PRUNE_EPOCH,
    DEFAULT_FISHER_MINIBATCH,
    DEFAULT_FISHER_SUBSAMPLE,
    DEFAULT_INITIAL_SPARSITY,
    DEFAULT_LAST_PRUNE_EPOCH,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LR_DECAY_FACTOR,
    DEFAULT_LR_DECAY_PERIOD,
    DEFAULT_MOMENTUM,
    DEFAULT_PRUNE_INTERVAL,
    DEFAULT_TOTAL_EPOCHS,
    MAX_SEED,
    GroupMode,
    LabelMode,
    PruneMethod,
    PruneScope,
)
from .exceptions import WoodPruneConfigError


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        msg = f"{name} must lie in [0, 1], got {value}"
        raise WoodPruneConfigError(msg)


def _check_seed(seed: int) -> None:
    if not 0 <= seed <= MAX_SEED:
        msg = f"seed must lie in [0, 2**64), got {seed}"
        raise WoodPruneConfigError(msg)


@dataclass(kw_only=True)
class TrainConfig(DataClassORJSONMixin):
    """Object holding the SGD hyperparameters."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the training hyperparameters."""
        _check_seed(self.seed)
        if self.learning_rate <= 0:
            msg = f"learning_rate must be positive, got {self.learning_rate}"
            raise WoodPruneConfigError(msg)
        if self.epochs < 0:
            msg = f"epochs must be non-negative, got {self.epochs}"
            raise WoodPruneConfigError(msg)
        if self.batch_size < 1:
            msg = f"batch_size must be at least 1, got {self.batch_size}"
            raise WoodPruneConfigError(msg)
        if not 0.0 <= self.momentum < 1.0:
            msg = f"momentum must lie in [0, 1), got {self.momentum}"
            raise WoodPruneConfigError(msg)
        if self.weight_decay < 0:
            msg = f"weight_decay must be non-negative, got {self.weight_decay}"
            raise WoodPruneConfigError(msg)


@dataclass(kw_only=True)
class FisherConfig(DataClassORJSONMixin):
    """Object holding the empirical Fisher estimation settings."""

    subsample_size: int = DEFAULT_FISHER_SUBSAMPLE
    minibatch_size: int = DEFAULT_FISHER_MINIBATCH
    damp: float = DEFAULT_DAMP
    chunk_size: int = DEFAULT_CHUNK_SIZE
    label_mode: LabelMode = LabelMode.EMPIRICAL

    def __post_init__(self) -> None:
        """Validate the Fisher settings."""
        if self.subsample_size < 1:
            msg = f"subsample_size must be at least 1, got {self.subsample_size}"
            raise WoodPruneConfigError(msg)
        if self.minibatch_size < 1:
            msg = f"minibatch_size must be at least 1, got {self.minibatch_size}"
            raise WoodPruneConfigError(msg)
        if self.chunk_size < 1:
            msg = f"chunk_size must be at least 1, got {self.chunk_size}"
            raise WoodPruneConfigError(msg)
        if not self.damp > 0:
            msg = f"damp must be positive, got {self.damp}"
            raise WoodPruneConfigError(msg)


@dataclass(kw_only=True)
class LrDecay(DataClassORJSONMixin):
    """Object holding an exponential learning rate decay.

    An unset start epoch means the epoch after the last pruning step.
    """

    start_epoch: int | None = None
    factor: float = DEFAULT_LR_DECAY_FACTOR
    period: int = DEFAULT_LR_DECAY_PERIOD

    def __post_init__(self) -> None:
        """Validate the decay settings."""
        if self.period < 1:
            msg = f"lr decay period must be at least 1, got {self.period}"
            raise WoodPruneConfigError(msg)
        if not 0.0 < self.factor <= 1.0:
            msg = f"lr decay factor must lie in (0, 1], got {self.factor}"
            raise WoodPruneConfigError(msg)


@dataclass(kw_only=True)
class ScheduleConfig(DataClassORJSONMixin):
    """Object holding a polynomial gradual pruning schedule."""

    initial_sparsity: float = DEFAULT_INITIAL_SPARSITY
    final_sparsity: float
    first_prune_epoch: int = DEFAULT_FIRST_PRUNE_EPOCH
    prune_interval: int = DEFAULT_PRUNE_INTERVAL
    last_prune_epoch: int = DEFAULT_LAST_PRUNE_EPOCH
    total_epochs: int = DEFAULT_TOTAL_EPOCHS
    lr_decay: LrDecay = field(default_factory=LrDecay)

    def __post_init__(self) -> None:
        """Validate the schedule."""
        _check_fraction("initial_sparsity", self.initial_sparsity)
        _check_fraction("final_sparsity", self.final_sparsity)
        if self.initial_sparsity > self.final_sparsity:
            msg = (
                f"initial_sparsity {self.initial_sparsity} exceeds "
                f"final_sparsity {self.final_sparsity}"
            )
            raise WoodPruneConfigError(msg)
        if self.prune_interval < 1:
            msg = f"prune_interval must be at least 1, got {self.prune_interval}"
            raise WoodPruneConfigError(msg)
        if self.first_prune_epoch < 0 or self.total_epochs < 0:
            msg = "epochs in a schedule must be non-negative"
            raise WoodPruneConfigError(msg)
        if self.prune_epochs and self.prune_epochs[-1] >= self.total_epochs:
            msg = (
                f"pruning at epoch {self.prune_epochs[-1]} does not fit in "
                f"{self.total_epochs} total epochs"
            )
            raise WoodPruneConfigError(msg)
        if len(self.prune_epochs) == 1 and (
            self.initial_sparsity != self.final_sparsity
        ):
            msg = "a single pruning step needs initial_sparsity == final_sparsity"
            raise WoodPruneConfigError(msg)

    @property
    def prune_epochs(self) -> list[int]:
        """Epochs at which a pruning step runs."""
        return list(
            range(
                self.first_prune_epoch,
                self.last_prune_epoch + 1,
                self.prune_interval,
            )
        )

    @property
    def lr_decay_start(self) -> int:
        """First epoch with a decayed learning rate."""
        if self.lr_decay.start_epoch is None:
            return self.last_prune_epoch + 1
        return self.lr_decay.start_epoch


@dataclass(kw_only=True)
class EpochMetrics(DataClassORJSONMixin):
    """Object holding the metrics of one training epoch."""

    epoch: int
    train_loss: float
    test_accuracy: float | None = None
    learning_rate: float


@dataclass(kw_only=True)
class TraceRow(DataClassORJSONMixin):
    """Object holding one epoch of a gradual pruning run."""

    epoch: int
    sparsity: float
    train_loss: float
    test_accuracy: float | None = None
    learning_rate: float


@dataclass(kw_only=True)
class GradualTrace(DataClassORJSONMixin):
    """Object holding the per-epoch record of a gradual pruning run."""

    rows: list[TraceRow] = field(default_factory=list)


@dataclass(kw_only=True)
class LayerSparsity(DataClassORJSONMixin):
    """Object holding the sparsity of a single prunable layer."""

    layer: str
    dense_params: int
    remaining_params: int
    sparsity: float


@dataclass(kw_only=True)
class ScanPoint(DataClassORJSONMixin):
    """Object holding one point of a local quadratic model scan."""

    t: float
    actual: float
    predicted: float


@dataclass(kw_only=True)
class CurvatureComparison(DataClassORJSONMixin):
    """Object holding how far the empirical Fisher is from the Hessian."""

    examples: int
    parameters: int
    top_k: int
    relative_difference: float
    top_overlap: float
    hessian_top: list[float]
    fisher_top: list[float]


@dataclass(kw_only=True)
class CheckpointHeader(DataClassORJSONMixin):
    """Object holding the JSON header of a model checkpoint."""

    format_version: int = 1
    layer_sizes: list[int]
    seed: int
    epoch: int
    size: int
    payload: str
    dtype: str = "<f8"


@dataclass(kw_only=True)
class RunConfig(DataClassORJSONMixin):
    """Object holding the resolved configuration of a CLI command."""

    command: str
    seed: int = 0
    layer_sizes: list[int] | None = None
    model_path: str | None = None
    output: str | None = None
    metrics: str | None = None
    trace: str | None = None
    save_model: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_limit: int | None = None
    test_limit: int | None = None
    train: TrainConfig | None = None
    fisher: FisherConfig | None = None
    schedule: ScheduleConfig | None = None
    method: PruneMethod | None = None
    scope: PruneScope | None = None
    sparsity: float | None = None
    recompute_steps: int = 1
    beta: float = 0.0
    groups: str | None = None
    group_mode: GroupMode = GroupMode.CORRELATED
    flop_table: str | None = None
    layer: str | None = None
    steps: int | None = None
    top_k: int | None = None

    def __post_init__(self) -> None:
        """Validate the flags that do not belong to a nested config."""
        _check_seed(self.seed)
        if self.sparsity is not None:
            _check_fraction("sparsity", self.sparsity)
        if self.recompute_steps < 1:
            msg = f"recompute_steps must be at least 1, got {self.recompute_steps}"
            raise WoodPruneConfigError(msg)
        if self.beta < 0:
            msg = f"beta must be non-negative, got {self.beta}"
            raise WoodPruneConfigError(msg)
        if self.steps is not None and self.steps < 1:
            msg = f"steps must be at least 1, got {self.steps}"
            raise WoodPruneConfigError(msg)
        if self.top_k is not None and self.top_k < 1:
            msg = f"top_k must be at least 1, got {self.top_k}"
            raise WoodPruneConfigError(msg)
        for name in ("train_limit", "test_limit"):
            if (limit := getattr(self, name)) is not None and limit < 0:
                msg = f"{name} must be non-negative, got {limit}"
                raise WoodPruneConfigError(msg)

    class Config(BaseConfig):
        """RunConfig model configuration."""

        omit_none = True


@dataclass(kw_only=True)
class PruneReport(DataClassORJSONMixin):
    """Object holding the outcome of a one-shot pruning run."""

    method: PruneMethod
    scope: PruneScope
    target: float
    sparsity: float
    layers: list[LayerSparsity]
    accuracy_before: float | None = None
    accuracy_after: float | None = None
    predicted_delta_loss: float
    seed: int
    recompute_steps: int = 1
    beta: float = 0.0
    config: RunConfig | None = None
    created: datetime | None = field(
        default=None,
        metadata=field_options(alias="timestamp"),
    )

    class Config(BaseConfig):
        """PruneReport model configuration."""

        serialize_by_alias = True
        allow_deserialization_not_by_alias = True
        omit_none = True

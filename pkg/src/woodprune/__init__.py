"""Second-order network pruning with WoodFisher inverse estimates."""

from .const import (
    GroupMode,
    LabelMode,
    LayerKind,
    PruneMethod,
    PruneScope,
    RngStream,
    Split,
)
from .core import (
    FlopEntry,
    FlopTable,
    LayerLayout,
    LayerSegment,
    Mask,
    ParamSpace,
    flops_per_param,
    layer_sparsity,
    rng_for,
    sparsity_of,
)
from .exceptions import (
    WoodPruneConfigError,
    WoodPruneDataError,
    WoodPruneDegenerateLayerError,
    WoodPruneError,
    WoodPruneFormatError,
    WoodPruneNumericError,
    WoodPruneStructuralError,
    WoodPruneTrainingError,
)
from .fisher import (
    ChunkedFisherInverse,
    DiagonalFisher,
    FisherChunk,
    GradSample,
    collect_grad_samples,
    diagonal_fisher,
    hutchinson_diagonal,
    ihvp,
    woodfisher_build,
)
from .io import (
    Dataset,
    load_checkpoint,
    load_mnist_idx,
    read_grad_dump,
    save_checkpoint,
    synth_gaussian_classes,
    write_grad_dump,
)
from .model import MlpModel, loss_and_grad, sample_label, sgd_train
from .models import (
    CheckpointHeader,
    CurvatureComparison,
    EpochMetrics,
    FisherConfig,
    GradualTrace,
    LayerSparsity,
    LrDecay,
    PruneReport,
    RunConfig,
    ScanPoint,
    ScheduleConfig,
    TraceRow,
    TrainConfig,
)
from .pruner import (
    GroupSpec,
    PruneDecision,
    Pruner,
    PruneStat,
    flops_normalize,
    one_shot_prune,
    pruning_direction,
    quad_scan,
    select,
    stat_structured,
    stat_woodfisher,
    stat_woodtaylor,
    structured_direction,
    structured_prune,
    woodtaylor_direction,
)
from .schedule import gradual_prune, learning_rate_at, sparsity_at

__all__ = [
    "CheckpointHeader",
    "ChunkedFisherInverse",
    "CurvatureComparison",
    "Dataset",
    "DiagonalFisher",
    "EpochMetrics",
    "FisherChunk",
    "FisherConfig",
    "FlopEntry",
    "FlopTable",
    "GradSample",
    "GradualTrace",
    "GroupMode",
    "GroupSpec",
    "LabelMode",
    "LayerKind",
    "LayerLayout",
    "LayerSegment",
    "LayerSparsity",
    "LrDecay",
    "Mask",
    "MlpModel",
    "ParamSpace",
    "PruneDecision",
    "PruneMethod",
    "PruneReport",
    "PruneScope",
    "PruneStat",
    "Pruner",
    "RngStream",
    "RunConfig",
    "ScanPoint",
    "ScheduleConfig",
    "Split",
    "TraceRow",
    "TrainConfig",
    "WoodPruneConfigError",
    "WoodPruneDataError",
    "WoodPruneDegenerateLayerError",
    "WoodPruneError",
    "WoodPruneFormatError",
    "WoodPruneNumericError",
    "WoodPruneStructuralError",
    "WoodPruneTrainingError",
    "collect_grad_samples",
    "diagonal_fisher",
    "flops_normalize",
    "flops_per_param",
    "gradual_prune",
    "hutchinson_diagonal",
    "ihvp",
    "layer_sparsity",
    "learning_rate_at",
    "load_checkpoint",
    "load_mnist_idx",
    "loss_and_grad",
    "one_shot_prune",
    "pruning_direction",
    "quad_scan",
    "read_grad_dump",
    "rng_for",
    "sample_label",
    "save_checkpoint",
    "select",
    "sgd_train",
    "sparsity_at",
    "sparsity_of",
    "stat_structured",
    "stat_woodfisher",
    "stat_woodtaylor",
    "structured_direction",
    "structured_prune",
    "synth_gaussian_classes",
    "woodfisher_build",
    "write_grad_dump",
]

"""Second-order pruning toolkit built on WoodFisher inverse estimates."""

import logging
from enum import Enum, IntEnum

LOGGER = logging.getLogger(__package__)

DEFAULT_DAMP = 1e-5
DEFAULT_FISHER_SUBSAMPLE = 80
DEFAULT_FISHER_MINIBATCH = 100
DEFAULT_CHUNK_SIZE = 128

DEFAULT_LEARNING_RATE = 0.005
DEFAULT_MOMENTUM = 0.9
DEFAULT_BATCH_SIZE = 64
DEFAULT_LAYER_SIZES = (784, 40, 20, 10)
MAX_SEED = 2**64 - 1

DEFAULT_INITIAL_SPARSITY = 0.05
DEFAULT_TOTAL_EPOCHS = 20
DEFAULT_FIRST_PRUNE_EPOCH = 1
DEFAULT_PRUNE_INTERVAL = 3
DEFAULT_LAST_PRUNE_EPOCH = 12
DEFAULT_LR_DECAY_FACTOR = 0.7
DEFAULT_LR_DECAY_PERIOD = 1

# Dense layers cost one multiply and one add per weight.
FLOPS_PER_DENSE_WEIGHT = 2

FD_GRADIENT_STEP = 1e-5
FD_HESSIAN_STEP = 1e-4

THREADS_ENV = "WOODPRUNE_THREADS"


class LayerKind(str, Enum):
    """Enum holding the kinds of segments in the flat parameter vector."""

    DENSE_WEIGHT = "dense-weight"
    BIAS = "bias"


class LabelMode(str, Enum):
    """Enum holding where Fisher gradient labels come from."""

    EMPIRICAL = "empirical"
    SAMPLED = "sampled"


class PruneMethod(str, Enum):
    """Enum holding the available pruning methods."""

    WOODFISHER = "woodfisher"
    WOODTAYLOR = "woodtaylor"
    MAGNITUDE = "magnitude"
    GLOBAL_MAGNITUDE = "global-magnitude"
    DIAGONAL_FISHER = "diag-fisher"
    OBD = "obd"


class PruneScope(str, Enum):
    """Enum holding how the sparsity target is distributed over layers."""

    INDEPENDENT = "independent"
    JOINT = "joint"


class GroupMode(str, Enum):
    """Enum holding the structured (group) statistics."""

    SUM = "sum"
    CORRELATED = "correlated"


class Split(str, Enum):
    """Enum holding the dataset split tags."""

    TRAIN = "train"
    TEST = "test"


class RngStream(IntEnum):
    """Independent random streams derived from the run seed."""

    INIT = 0
    TRAIN_SHUFFLE = 1
    FISHER_SAMPLING = 2
    LABEL_SAMPLING = 3
    SYNTHETIC = 4
    HUTCHINSON = 5

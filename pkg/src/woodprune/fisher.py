"""Dampened empirical Fisher estimates and their inverses."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np

from .const import FD_HESSIAN_STEP, LOGGER, LabelMode
from .exceptions import (
    WoodPruneConfigError,
    WoodPruneDataError,
    WoodPruneNumericError,
    WoodPruneStructuralError,
)
from .model import batch_loss_and_grad, sample_labels
from .models import FisherConfig

if TYPE_CHECKING:
    from collections.abc import Collection, Sequence

    from numpy.typing import NDArray

    from .core import LayerLayout
    from .io import Dataset
    from .model import MlpModel

    FloatArray = NDArray[np.float64]
    IntArray = NDArray[np.int64]


@dataclass(frozen=True, eq=False)
class GradSample:
    """One (possibly mini-batch averaged) gradient used as a rank-one term."""

    grad: FloatArray
    weight: int = 1

    def __post_init__(self) -> None:
        """Validate the sample."""
        grad = np.asarray(self.grad, dtype=np.float64)
        if grad.ndim != 1:
            msg = f"gradient samples must be vectors, got shape {grad.shape}"
            raise WoodPruneStructuralError(msg)
        if not np.all(np.isfinite(grad)):
            msg = "gradient sample contains non-finite entries"
            raise WoodPruneNumericError(msg)
        if self.weight < 1:
            msg = f"gradient sample weight must be at least 1, got {self.weight}"
            raise WoodPruneStructuralError(msg)
        object.__setattr__(self, "grad", grad)


def collect_grad_samples(
    model: MlpModel,
    dataset: Dataset,
    cfg: FisherConfig,
    rng: np.random.Generator,
    *,
    label_rng: np.random.Generator | None = None,
) -> list[GradSample]:
    """Collect the gradients that make up the empirical Fisher.

    Examples are drawn without replacement; every group of
    `cfg.minibatch_size` examples is averaged into one sample.

    Args:
    ----
        model: The network at which gradients are taken.
        dataset: Examples to draw from.
        cfg: Fisher settings (subsample size, mini-batch size, label mode).
        rng: Generator choosing the examples.
        label_rng: Generator for sampled labels; defaults to `rng`.

    Returns:
    -------
        Exactly `cfg.subsample_size` gradient samples.

    Raises:
    ------
        WoodPruneDataError: The dataset holds fewer than
            subsample_size x minibatch_size examples.

    """
    needed = cfg.subsample_size * cfg.minibatch_size
    if len(dataset) < needed:
        msg = (
            f"the Fisher estimate needs {needed} examples, "
            f"the dataset has {len(dataset)}"
        )
        raise WoodPruneDataError(msg)
    label_rng = label_rng or rng
    groups = rng.permutation(len(dataset))[:needed].reshape(
        cfg.subsample_size, cfg.minibatch_size
    )
    samples: list[GradSample] = []
    for group in groups:
        inputs = dataset.inputs[group]
        if cfg.label_mode is LabelMode.SAMPLED:
            labels = sample_labels(model, inputs, label_rng)
        else:
            labels = dataset.labels[group]
        _, grad = batch_loss_and_grad(model, inputs, labels)
        samples.append(GradSample(grad, weight=cfg.minibatch_size))
    LOGGER.debug(
        "Collected %d gradient samples (%s labels)", len(samples), cfg.label_mode.value
    )
    return samples


def stack_samples(samples: Sequence[GradSample], size: int) -> FloatArray:
    """Stack gradient samples into an (m, d) matrix."""
    for number, sample in enumerate(samples):
        if sample.grad.shape != (size,):
            msg = (
                f"gradient sample {number} has length {sample.grad.shape[0]}, "
                f"expected {size}"
            )
            raise WoodPruneStructuralError(msg)
    if not samples:
        return np.zeros((0, size))
    return np.stack([sample.grad for sample in samples])


@dataclass(frozen=True, eq=False, kw_only=True)
class FisherChunk:
    """Inverse of one diagonal block of the dampened empirical Fisher."""

    layer: str
    start: int
    stop: int
    inverse: FloatArray

    @property
    def span(self) -> slice:
        """Slice of the flat vector covered by this chunk."""
        return slice(self.start, self.stop)


@dataclass(frozen=True, eq=False, kw_only=True)
class ChunkedFisherInverse:
    """Block-diagonal inverse of the dampened empirical Fisher."""

    chunks: tuple[FisherChunk, ...]
    config: FisherConfig
    size: int
    samples: FloatArray = field(repr=False)

    def __post_init__(self) -> None:
        """Check that chunks are disjoint and ordered."""
        position = 0
        for chunk in self.chunks:
            if chunk.start < position or chunk.stop > self.size:
                msg = f"chunk [{chunk.start}, {chunk.stop}) overlaps or overflows"
                raise WoodPruneStructuralError(msg)
            position = chunk.stop

    @classmethod
    def from_dense(
        cls,
        inverse: FloatArray,
        *,
        damp: float = 1.0,
        samples: FloatArray | None = None,
    ) -> ChunkedFisherInverse:
        """Wrap one dense inverse as a single chunk covering every coordinate."""
        inverse = np.asarray(inverse, dtype=np.float64)
        size = inverse.shape[0]
        return cls(
            chunks=(FisherChunk(layer="dense", start=0, stop=size, inverse=inverse),),
            config=FisherConfig(
                subsample_size=max(1, 0 if samples is None else samples.shape[0]),
                damp=damp,
                chunk_size=max(size, 1),
            ),
            size=size,
            samples=np.zeros((0, size)) if samples is None else samples,
        )

    @property
    def damp(self) -> float:
        """Dampening added to the Fisher diagonal."""
        return self.config.damp

    @cached_property
    def owner(self) -> IntArray:
        """Chunk number owning every flat index, -1 outside all chunks."""
        owner = np.full(self.size, -1, dtype=np.int64)
        for number, chunk in enumerate(self.chunks):
            owner[chunk.span] = number
        return owner


def chunk_ranges(
    layout: LayerLayout,
    chunk_size: int,
    layers: Collection[str] | None = None,
) -> list[tuple[str, int, int]]:
    """Split every segment into consecutive chunks of at most `chunk_size`.

    Chunks never cross a segment boundary; the last chunk of a segment may be
    smaller. Segments not named in `layers` are left uncovered.
    """
    if chunk_size < 1:
        msg = f"chunk_size must be at least 1, got {chunk_size}"
        raise WoodPruneConfigError(msg)
    ranges: list[tuple[str, int, int]] = []
    for segment in layout:
        if layers is not None and segment.name not in layers:
            continue
        for start in range(segment.offset, segment.stop, chunk_size):
            ranges.append((segment.name, start, min(start + chunk_size, segment.stop)))
    return ranges


def _woodbury_block(grads: FloatArray, damp: float, label: str) -> FloatArray:
    """Invert damp * I + (1/m) sum g g^T by m Sherman-Morrison updates."""
    count = grads.shape[0]
    inverse = np.eye(grads.shape[1]) / damp
    for number, grad in enumerate(grads):
        projected = inverse @ grad
        denominator = count + grad @ projected
        if not (np.isfinite(denominator) and np.all(np.isfinite(projected))):
            msg = f"non-finite Woodbury update {number} in chunk {label}"
            raise WoodPruneNumericError(msg)
        inverse -= np.outer(projected, projected) / denominator
    return inverse


def woodfisher_build(
    samples: Sequence[GradSample],
    layout: LayerLayout,
    cfg: FisherConfig,
    *,
    layers: Collection[str] | None = None,
    threads: int = 1,
) -> ChunkedFisherInverse:
    """Build the chunked WoodFisher inverse from gradient samples.

    Every chunk starts from I / damp and absorbs each sample through one
    rank-one Woodbury update, giving the exact inverse of its diagonal block
    of damp * I + (1/m) sum_n g_n g_n^T. Chunks are independent and are built
    concurrently when `threads` > 1; the result does not depend on it.

    Args:
    ----
        samples: The m gradient samples, each of length d.
        layout: Parameter layout; chunks follow its segment boundaries.
        cfg: Fisher settings (dampening, chunk size).
        layers: Optional segment names to cover; others stay outside chunks.
        threads: Worker threads used for the chunk builds.

    Returns:
    -------
        The block-diagonal inverse estimate.

    Raises:
    ------
        WoodPruneNumericError: A Woodbury update produced non-finite values.
        WoodPruneStructuralError: A sample does not have length d.

    """
    grads = stack_samples(samples, layout.size)
    ranges = chunk_ranges(layout, cfg.chunk_size, layers)

    def build(piece: tuple[str, int, int]) -> FisherChunk:
        name, start, stop = piece
        inverse = _woodbury_block(
            grads[:, start:stop], cfg.damp, f"{name}[{start}:{stop}]"
        )
        return FisherChunk(layer=name, start=start, stop=stop, inverse=inverse)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            chunks = tuple(executor.map(build, ranges))
    else:
        chunks = tuple(build(piece) for piece in ranges)
    LOGGER.debug(
        "Built %d WoodFisher chunks from %d samples", len(chunks), grads.shape[0]
    )
    return ChunkedFisherInverse(
        chunks=chunks, config=cfg, size=layout.size, samples=grads
    )


def _check_vector(inv: ChunkedFisherInverse, vector: FloatArray) -> FloatArray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (inv.size,):
        msg = f"vector has shape {vector.shape}, expected ({inv.size},)"
        raise WoodPruneStructuralError(msg)
    return vector


def ihvp(inv: ChunkedFisherInverse, vector: FloatArray) -> FloatArray:
    """Return the inverse-Fisher vector product, block by block.

    Coordinates outside every chunk are scaled by 1 / damp.
    """
    vector = _check_vector(inv, vector)
    result = vector / inv.damp
    for chunk in inv.chunks:
        result[chunk.span] = chunk.inverse @ vector[chunk.span]
    return result


def inverse_diagonal(inv: ChunkedFisherInverse) -> FloatArray:
    """Return the diagonal of the block-diagonal inverse."""
    diagonal = np.full(inv.size, 1.0 / inv.damp)
    for chunk in inv.chunks:
        diagonal[chunk.span] = np.diag(chunk.inverse)
    return diagonal


def fisher_matvec(inv: ChunkedFisherInverse, vector: FloatArray) -> FloatArray:
    """Multiply by the dampened empirical Fisher using the stored samples."""
    vector = _check_vector(inv, vector)
    grads = inv.samples
    result = inv.damp * vector
    if grads.shape[0]:
        result += grads.T @ (grads @ vector) / grads.shape[0]
    return result


@dataclass(frozen=True, eq=False)
class DiagonalFisher:
    """Diagonal estimate of the dampened empirical Fisher."""

    diag: FloatArray
    damp: float


def diagonal_fisher(
    samples: Sequence[GradSample],
    damp: float,
    *,
    size: int | None = None,
) -> DiagonalFisher:
    """Return damp + the mean squared gradient of every coordinate.

    `size` is only needed when there are no samples to infer d from.
    """
    if size is None:
        if not samples:
            msg = "size is required when no gradient samples are given"
            raise WoodPruneStructuralError(msg)
        size = samples[0].grad.shape[0]
    grads = stack_samples(samples, size)
    diag = np.full(size, float(damp))
    if grads.shape[0]:
        diag += np.mean(grads * grads, axis=0)
    return DiagonalFisher(diag=diag, damp=damp)


def hutchinson_diagonal(
    model: MlpModel,
    dataset: Dataset,
    cfg: FisherConfig,
    rng: np.random.Generator,
    *,
    step: float = FD_HESSIAN_STEP,
) -> FloatArray:
    """Estimate the diagonal of the loss Hessian with Rademacher vectors.

    Each of the `cfg.subsample_size` vectors z uses its own mini-batch and a
    central-difference Hessian-vector product of the analytic gradient; the
    estimate is the mean of z * (H z).

    Raises
    ------
        WoodPruneDataError: Not enough examples for the requested vectors.

    """
    needed = cfg.subsample_size * cfg.minibatch_size
    if len(dataset) < needed:
        msg = f"the Hessian estimate needs {needed} examples, got {len(dataset)}"
        raise WoodPruneDataError(msg)
    groups = rng.permutation(len(dataset))[:needed].reshape(
        cfg.subsample_size, cfg.minibatch_size
    )
    values = model.values
    estimate = np.zeros(values.shape[0])
    for group in groups:
        sign = rng.choice(np.array([-1.0, 1.0]), size=values.shape[0])
        inputs, labels = dataset.inputs[group], dataset.labels[group]
        _, plus = batch_loss_and_grad(
            model.with_values(values + step * sign), inputs, labels
        )
        _, minus = batch_loss_and_grad(
            model.with_values(values - step * sign), inputs, labels
        )
        estimate += sign * (plus - minus) / (2.0 * step)
    return estimate / groups.shape[0]

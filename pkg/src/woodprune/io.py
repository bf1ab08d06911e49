"""Datasets, checkpoints, gradient dumps and result files."""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import orjson
from mashumaro.exceptions import MissingField

from .const import LOGGER, RngStream, Split
from .core import LayerLayout, rng_for
from .exceptions import (
    WoodPruneConfigError,
    WoodPruneDataError,
    WoodPruneFormatError,
    WoodPruneStructuralError,
)
from .fisher import GradSample, stack_samples
from .model import MlpModel
from .models import CheckpointHeader

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import NDArray

    from .models import (
        CurvatureComparison,
        EpochMetrics,
        GradualTrace,
        PruneReport,
        ScanPoint,
    )

    FloatArray = NDArray[np.float64]
    IntArray = NDArray[np.int64]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_CLASSES = 10

GRAD_DUMP_MAGIC = b"WFGD"
GRAD_DUMP_VERSION = 1
GRAD_DUMP_HEADER = struct.Struct("<4sIQQI")

CHECKPOINT_VERSION = 1
PAYLOAD_DTYPE = "<f8"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled examples, inputs as an (n, in_dim) array."""

    inputs: FloatArray
    labels: IntArray
    split: Split = Split.TRAIN
    classes: int = MNIST_CLASSES

    def __post_init__(self) -> None:
        """Validate and normalize the arrays."""
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1:
            msg = (
                f"dataset needs 2-d inputs and 1-d labels, "
                f"got {inputs.shape} and {labels.shape}"
            )
            raise WoodPruneDataError(msg)
        if inputs.shape[0] != labels.shape[0]:
            msg = f"{inputs.shape[0]} inputs but {labels.shape[0]} labels"
            raise WoodPruneDataError(msg)
        if labels.size and (labels.min() < 0 or labels.max() >= self.classes):
            msg = f"labels must lie in [0, {self.classes})"
            raise WoodPruneDataError(msg)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        """Return the number of examples."""
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        """Width of a single input."""
        return int(self.inputs.shape[1])

    def take(self, indices: Sequence[int] | IntArray) -> Dataset:
        """Return the examples at the given indices, in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.inputs[indices], self.labels[indices], self.split, self.classes
        )

    def head(self, limit: int | None) -> Dataset:
        """Return the first `limit` examples (all of them for None)."""
        if limit is None or limit >= len(self):
            return self
        return Dataset(
            self.inputs[:limit], self.labels[:limit], self.split, self.classes
        )


def _read_file(path: str | Path, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exception:
        msg = f"cannot read {what} {path}: {exception.strerror or exception}"
        raise WoodPruneDataError(msg) from exception


def _read_idx(data: bytes, magic: int, path: str | Path) -> tuple[list[int], bytes]:
    """Split an IDX file into its dimensions and unsigned byte payload."""
    if len(data) < 4:
        msg = f"{path}: file too short for an IDX header"
        raise WoodPruneFormatError(msg, offset=len(data))
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        msg = f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}"
        raise WoodPruneFormatError(msg, offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        msg = f"{path}: truncated IDX header"
        raise WoodPruneFormatError(msg, offset=len(data))
    dims = list(struct.unpack_from(f">{ndim}I", data, 4))
    expected = int(np.prod(dims, dtype=np.int64))
    payload = data[header:]
    if len(payload) < expected:
        msg = f"{path}: IDX payload truncated, expected {expected} bytes"
        raise WoodPruneFormatError(msg, offset=len(data))
    if len(payload) > expected:
        msg = f"{path}: {len(payload) - expected} trailing bytes after IDX payload"
        raise WoodPruneFormatError(msg, offset=header + expected)
    return dims, payload


def load_mnist_idx(
    images: str | Path,
    labels: str | Path,
    limit: int | None = None,
    *,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Load an MNIST image/label file pair in IDX format.

    Pixels are scaled to [0, 1]. With `limit`, only the first `limit`
    examples are kept.

    Raises
    ------
        WoodPruneDataError: A file is missing or the two files disagree.
        WoodPruneFormatError: A file is not valid IDX; the message carries
            the byte offset of the problem.

    """
    image_dims, pixels = _read_idx(
        _read_file(images, "images"), IDX_IMAGES_MAGIC, images
    )
    label_dims, classes = _read_idx(
        _read_file(labels, "labels"), IDX_LABELS_MAGIC, labels
    )
    count, rows, cols = image_dims
    if label_dims[0] != count:
        msg = (
            f"{images} holds {count} images "
            f"but {labels} holds {label_dims[0]} labels"
        )
        raise WoodPruneDataError(msg)
    keep = count if limit is None else min(limit, count)
    inputs = np.frombuffer(pixels, dtype=np.uint8, count=keep * rows * cols)
    targets = np.frombuffer(classes, dtype=np.uint8, count=keep)
    LOGGER.debug(
        "Loaded %d of %d %s examples from %s", keep, count, split.value, images
    )
    return Dataset(
        inputs.reshape(keep, rows * cols) / 255.0,
        targets.astype(np.int64),
        split,
    )


def synth_gaussian_classes(  # noqa: PLR0913
    classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int,
    *,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Draw unit-variance Gaussian clusters, one per class.

    Class c is centred at c * separation along the first axis; the examples
    are returned in a seed-determined shuffled order.

    Raises
    ------
        WoodPruneConfigError: `separation` is not positive, or a count is
            negative.

    """
    if not separation > 0:
        msg = f"separation must be positive, got {separation}"
        raise WoodPruneConfigError(msg)
    if classes < 1 or per_class < 0 or dim < 1:
        msg = "classes and dim must be positive and per_class non-negative"
        raise WoodPruneConfigError(msg)
    rng = rng_for(seed, RngStream.SYNTHETIC)
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    inputs = rng.standard_normal((labels.shape[0], dim))
    inputs[:, 0] += labels * separation
    order = rng.permutation(labels.shape[0])
    return Dataset(inputs[order], labels[order], split, classes)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write a file through a temporary sibling and an atomic rename."""
    path = Path(path)
    temporary = path.with_name(f".{path.name}.tmp")
    try:
        temporary.write_bytes(data)
        os.replace(temporary, path)
    except OSError as exception:
        temporary.unlink(missing_ok=True)
        msg = f"cannot write {path}: {exception.strerror or exception}"
        raise WoodPruneDataError(msg) from exception


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write UTF-8 text atomically."""
    atomic_write_bytes(path, text.encode("utf-8"))


def _payload_path(path: Path) -> Path:
    if path.suffix == ".bin":
        msg = f"checkpoint header {path} must not use the .bin suffix"
        raise WoodPruneConfigError(msg)
    return path.with_name(f"{path.stem}.bin")


def save_checkpoint(
    path: str | Path,
    model: MlpModel,
    *,
    seed: int,
    epoch: int,
) -> CheckpointHeader:
    """Write a JSON header and a little-endian float64 weight sidecar.

    The sidecar sits next to the header as `<stem>.bin`.
    """
    path = Path(path)
    payload = _payload_path(path)
    header = CheckpointHeader(
        format_version=CHECKPOINT_VERSION,
        layer_sizes=list(model.layer_sizes),
        seed=seed,
        epoch=epoch,
        size=model.space.size,
        payload=payload.name,
        dtype=PAYLOAD_DTYPE,
    )
    atomic_write_bytes(payload, model.values.astype(PAYLOAD_DTYPE).tobytes())
    atomic_write_bytes(
        path, orjson.dumps(header.to_dict(), option=orjson.OPT_INDENT_2)
    )
    LOGGER.debug("Saved checkpoint %s (%d parameters)", path, header.size)
    return header


def load_checkpoint(path: str | Path) -> tuple[MlpModel, CheckpointHeader]:
    """Read a checkpoint written by `save_checkpoint`.

    Raises
    ------
        WoodPruneDataError: The header or the payload is missing.
        WoodPruneFormatError: Either file is malformed or they disagree.

    """
    path = Path(path)
    raw = _read_file(path, "checkpoint")
    try:
        header = CheckpointHeader.from_json(raw)
    except (ValueError, TypeError, MissingField) as exception:
        msg = f"{path}: invalid checkpoint header: {exception}"
        raise WoodPruneFormatError(msg) from exception
    if header.format_version != CHECKPOINT_VERSION or header.dtype != PAYLOAD_DTYPE:
        msg = (
            f"{path}: unsupported checkpoint version {header.format_version} "
            f"with dtype {header.dtype}"
        )
        raise WoodPruneFormatError(msg)
    try:
        expected = LayerLayout.for_mlp(header.layer_sizes).size
    except WoodPruneStructuralError as exception:
        msg = f"{path}: invalid layer sizes {header.layer_sizes}"
        raise WoodPruneFormatError(msg) from exception
    if header.size != expected:
        msg = f"{path}: header size {header.size} does not match {expected}"
        raise WoodPruneFormatError(msg)
    if header.payload in ("", ".", "..") or Path(header.payload).name != header.payload:
        msg = f"{path}: payload {header.payload!r} must be a bare file name"
        raise WoodPruneFormatError(msg)
    data = _read_file(path.parent / header.payload, "checkpoint payload")
    if len(data) != 8 * header.size:
        msg = f"{header.payload}: expected {8 * header.size} bytes, found {len(data)}"
        raise WoodPruneFormatError(msg, offset=min(len(data), 8 * header.size))
    values = np.frombuffer(data, dtype=PAYLOAD_DTYPE).astype(np.float64)
    return MlpModel.from_values(header.layer_sizes, values), header


def write_grad_dump(
    path: str | Path,
    samples: Sequence[GradSample],
    *,
    size: int | None = None,
) -> None:
    """Write gradient samples in the WFGD format.

    The header is magic, version (u32), d (u64), m (u64) and mini-batch size
    (u32), all little-endian, followed by m float64 vectors of length d.
    """
    if size is None:
        if not samples:
            msg = "size is required when no gradient samples are given"
            raise WoodPruneStructuralError(msg)
        size = samples[0].grad.shape[0]
    minibatch = samples[0].weight if samples else 1
    if any(sample.weight != minibatch for sample in samples):
        msg = "all gradient samples in a dump must share one mini-batch size"
        raise WoodPruneStructuralError(msg)
    grads = stack_samples(samples, size)
    header = GRAD_DUMP_HEADER.pack(
        GRAD_DUMP_MAGIC, GRAD_DUMP_VERSION, size, len(samples), minibatch
    )
    atomic_write_bytes(path, header + grads.astype(PAYLOAD_DTYPE).tobytes())


def read_grad_dump(path: str | Path) -> tuple[list[GradSample], int]:
    """Read a WFGD gradient dump.

    Returns
    -------
        The gradient samples and the dimension d.

    Raises
    ------
        WoodPruneFormatError: Bad magic, version or length.

    """
    data = _read_file(path, "gradient dump")
    if len(data) < GRAD_DUMP_HEADER.size:
        msg = f"{path}: file too short for a gradient dump header"
        raise WoodPruneFormatError(msg, offset=len(data))
    magic, version, size, count, minibatch = GRAD_DUMP_HEADER.unpack_from(data, 0)
    if magic != GRAD_DUMP_MAGIC:
        msg = f"{path}: bad gradient dump magic {magic!r}"
        raise WoodPruneFormatError(msg, offset=0)
    if version != GRAD_DUMP_VERSION:
        msg = f"{path}: unsupported gradient dump version {version}"
        raise WoodPruneFormatError(msg, offset=4)
    if minibatch < 1:
        msg = f"{path}: mini-batch size must be at least 1"
        raise WoodPruneFormatError(msg, offset=24)
    expected = GRAD_DUMP_HEADER.size + 8 * size * count
    if len(data) != expected:
        msg = f"{path}: expected {expected} bytes, found {len(data)}"
        raise WoodPruneFormatError(msg, offset=min(len(data), expected))
    if count == 0:
        return [], int(size)
    grads = np.frombuffer(
        data, dtype=PAYLOAD_DTYPE, offset=GRAD_DUMP_HEADER.size
    ).reshape(count, size)
    samples = [GradSample(grad.astype(np.float64), weight=minibatch) for grad in grads]
    return samples, int(size)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_trace_csv(path: str | Path, trace: GradualTrace) -> None:
    """Write a gradual pruning trace as epoch, sparsity, train_loss, test_acc, lr."""
    atomic_write_text(
        path,
        _csv_text(
            ("epoch", "sparsity", "train_loss", "test_acc", "lr"),
            (
                (
                    row.epoch,
                    _cell(row.sparsity),
                    _cell(row.train_loss),
                    _cell(row.test_accuracy),
                    _cell(row.learning_rate),
                )
                for row in trace.rows
            ),
        ),
    )


def write_metrics_csv(path: str | Path, metrics: Sequence[EpochMetrics]) -> None:
    """Write training metrics as epoch, train_loss, test_acc, lr."""
    atomic_write_text(
        path,
        _csv_text(
            ("epoch", "train_loss", "test_acc", "lr"),
            (
                (
                    row.epoch,
                    _cell(row.train_loss),
                    _cell(row.test_accuracy),
                    _cell(row.learning_rate),
                )
                for row in metrics
            ),
        ),
    )


def write_scan_csv(path: str | Path, points: Sequence[ScanPoint]) -> None:
    """Write a quadratic model scan as t, actual, predicted."""
    atomic_write_text(
        path,
        _csv_text(
            ("t", "actual", "predicted"),
            (
                (_cell(point.t), _cell(point.actual), _cell(point.predicted))
                for point in points
            ),
        ),
    )


def write_report(
    path: str | Path, report: PruneReport | CurvatureComparison
) -> None:
    """Write a report record as indented JSON with sorted keys."""
    atomic_write_bytes(
        path,
        orjson.dumps(
            report.to_dict(),
            option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS,
        ),
    )


def _read_json(path: str | Path, what: str) -> object:
    data = _read_file(path, what)
    try:
        return orjson.loads(data)
    except orjson.JSONDecodeError as exception:
        msg = f"{path}: invalid JSON in {what}: {exception}"
        raise WoodPruneFormatError(msg, offset=exception.pos) from exception


def read_flop_table(path: str | Path) -> dict[str, float]:
    """Read per-layer dense FLOP costs from a JSON object."""
    content = _read_json(path, "FLOP table")
    if not isinstance(content, dict) or not all(
        isinstance(value, int | float) and not isinstance(value, bool)
        for value in content.values()
    ):
        msg = f"{path}: a FLOP table maps layer names to numbers"
        raise WoodPruneFormatError(msg)
    return {str(layer): float(value) for layer, value in content.items()}


def read_groups(path: str | Path) -> list[list[int]]:
    """Read parameter groups from a JSON list of index lists."""
    content = _read_json(path, "groups")
    if not isinstance(content, list) or not all(
        isinstance(group, list)
        and all(
            isinstance(index, int) and not isinstance(index, bool)
            for index in group
        )
        for group in content
    ):
        msg = f"{path}: groups must be a list of index lists"
        raise WoodPruneFormatError(msg)
    return [list(group) for group in content]

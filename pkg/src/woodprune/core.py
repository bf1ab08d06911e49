"""Flat parameter space, layer layout, masks and FLOP accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .const import FLOPS_PER_DENSE_WEIGHT, LayerKind, RngStream
from .exceptions import (
    WoodPruneDegenerateLayerError,
    WoodPruneNumericError,
    WoodPruneStructuralError,
)
from .models import LayerSparsity

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Mapping, Sequence

    from numpy.typing import NDArray

    FloatArray = NDArray[np.float64]
    BoolArray = NDArray[np.bool_]
    IndexArray = NDArray[np.int64]


def rng_for(seed: int, stream: RngStream, *keys: int) -> np.random.Generator:
    """Return the counter-based generator of one named random stream.

    Every stream is a Philox generator seeded from the run seed and a spawn
    key made of the stream id and any extra keys (an epoch, a stage), so
    streams never overlap and are reproducible in isolation.

    Args:
    ----
        seed: The 64-bit run seed.
        stream: Which stream to derive.
        keys: Additional integers distinguishing sub-streams.

    Returns:
    -------
        A numpy Generator.

    """
    sequence = np.random.SeedSequence(seed, spawn_key=(int(stream), *keys))
    return np.random.Generator(np.random.Philox(sequence))


def count_for_fraction(fraction: float, total: int) -> int:
    """Convert a sparsity fraction into a count, never exceeding the fraction."""
    # The epsilon absorbs representation error, e.g. 0.7 * 10 = 6.999...
    return min(total, math.floor(fraction * total + 1e-9))


@dataclass(frozen=True, kw_only=True)
class LayerSegment:
    """One contiguous segment of the flat parameter vector."""

    name: str
    kind: LayerKind
    offset: int
    length: int
    fan_in: int
    fan_out: int

    @property
    def stop(self) -> int:
        """End (exclusive) of the segment in the flat vector."""
        return self.offset + self.length

    @property
    def span(self) -> slice:
        """Slice selecting the segment from the flat vector."""
        return slice(self.offset, self.stop)

    @property
    def prunable(self) -> bool:
        """Whether weights of this segment may be pruned."""
        return self.kind is LayerKind.DENSE_WEIGHT

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of the segment when unflattened."""
        if self.kind is LayerKind.DENSE_WEIGHT:
            return (self.fan_in, self.fan_out)
        return (self.length,)


@dataclass(frozen=True)
class LayerLayout:
    """Ordered, contiguous segments covering exactly [0, d)."""

    segments: tuple[LayerSegment, ...]

    def __post_init__(self) -> None:
        """Validate contiguity and segment sizes."""
        offset = 0
        names: set[str] = set()
        for segment in self.segments:
            if segment.offset != offset:
                msg = (
                    f"segment {segment.name} starts at {segment.offset}, "
                    f"expected {offset}"
                )
                raise WoodPruneStructuralError(msg)
            if segment.length < 0:
                msg = f"segment {segment.name} has negative length"
                raise WoodPruneStructuralError(msg)
            if (
                segment.kind is LayerKind.DENSE_WEIGHT
                and segment.length != segment.fan_in * segment.fan_out
            ):
                msg = (
                    f"dense segment {segment.name} has length {segment.length}, "
                    f"expected {segment.fan_in} x {segment.fan_out}"
                )
                raise WoodPruneStructuralError(msg)
            if segment.name in names:
                msg = f"duplicate segment name {segment.name}"
                raise WoodPruneStructuralError(msg)
            names.add(segment.name)
            offset = segment.stop

    @classmethod
    def from_layers(
        cls,
        layers: Sequence[tuple[str, int, int]],
        *,
        bias: bool = True,
    ) -> LayerLayout:
        """Build a layout from (name, fan_in, fan_out) dense layers.

        Args:
        ----
            layers: The dense layers in forward order.
            bias: Whether each dense layer is followed by a bias segment.

        Returns:
        -------
            The layout, with weight segments named `<name>.weight` and bias
            segments named `<name>.bias`.

        """
        segments: list[LayerSegment] = []
        offset = 0
        for name, fan_in, fan_out in layers:
            segments.append(
                LayerSegment(
                    name=f"{name}.weight",
                    kind=LayerKind.DENSE_WEIGHT,
                    offset=offset,
                    length=fan_in * fan_out,
                    fan_in=fan_in,
                    fan_out=fan_out,
                )
            )
            offset += fan_in * fan_out
            if bias:
                segments.append(
                    LayerSegment(
                        name=f"{name}.bias",
                        kind=LayerKind.BIAS,
                        offset=offset,
                        length=fan_out,
                        fan_in=1,
                        fan_out=fan_out,
                    )
                )
                offset += fan_out
        return cls(tuple(segments))

    @classmethod
    def for_mlp(cls, layer_sizes: Sequence[int]) -> LayerLayout:
        """Build the layout of a fully-connected network (fc1, fc2, ...)."""
        if len(layer_sizes) < 2 or any(size < 1 for size in layer_sizes):
            msg = f"invalid layer sizes {list(layer_sizes)}"
            raise WoodPruneStructuralError(msg)
        return cls.from_layers(
            [
                (f"fc{number}", fan_in, fan_out)
                for number, (fan_in, fan_out) in enumerate(
                    zip(layer_sizes[:-1], layer_sizes[1:], strict=True), start=1
                )
            ]
        )

    @property
    def size(self) -> int:
        """Total parameter count d."""
        return self.segments[-1].stop if self.segments else 0

    def __iter__(self) -> Iterator[LayerSegment]:
        """Iterate over the segments in order."""
        return iter(self.segments)

    def weight_segments(self) -> list[LayerSegment]:
        """Return the prunable (dense-weight) segments."""
        return [segment for segment in self.segments if segment.prunable]

    def segment(self, name: str) -> LayerSegment:
        """Return the segment with the given name."""
        for segment in self.segments:
            if segment.name == name:
                return segment
        msg = f"unknown layer {name}"
        raise WoodPruneStructuralError(msg)

    def prunable(self) -> BoolArray:
        """Return the prunable flag of every flat index."""
        flags = np.zeros(self.size, dtype=bool)
        for segment in self.weight_segments():
            flags[segment.span] = True
        return flags

    def flatten(self, arrays: Sequence[FloatArray]) -> FloatArray:
        """Concatenate per-segment arrays into one flat float64 vector."""
        if len(arrays) != len(self.segments):
            msg = f"expected {len(self.segments)} arrays, got {len(arrays)}"
            raise WoodPruneStructuralError(msg)
        for segment, array in zip(self.segments, arrays, strict=True):
            if tuple(np.shape(array)) != segment.shape:
                msg = (
                    f"array for {segment.name} has shape {np.shape(array)}, "
                    f"expected {segment.shape}"
                )
                raise WoodPruneStructuralError(msg)
        if not arrays:
            return np.zeros(0)
        return np.concatenate(
            [np.asarray(array, dtype=np.float64).ravel() for array in arrays]
        )

    def unflatten(self, values: FloatArray) -> list[FloatArray]:
        """Split a flat vector into per-segment views of their natural shape."""
        self.check_length(values)
        return [values[segment.span].reshape(segment.shape) for segment in self]

    def check_length(self, vector: NDArray[np.generic], what: str = "vector") -> None:
        """Raise unless the vector has exactly d entries."""
        if vector.shape != (self.size,):
            msg = f"{what} has shape {vector.shape}, expected ({self.size},)"
            raise WoodPruneStructuralError(msg)


@dataclass(frozen=True, eq=False)
class ParamSpace:
    """Flat parameter values together with their layout."""

    values: FloatArray
    layout: LayerLayout
    prunable: BoolArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate values and derive the prunable flags."""
        values = np.asarray(self.values, dtype=np.float64)
        self.layout.check_length(values, "parameter values")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            msg = f"parameter values contain a non-finite entry at index {bad}"
            raise WoodPruneNumericError(msg)
        values.setflags(write=False)
        prunable = self.layout.prunable()
        prunable.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "prunable", prunable)

    @property
    def size(self) -> int:
        """Total parameter count d."""
        return self.layout.size

    def with_values(self, values: FloatArray) -> ParamSpace:
        """Return a space with the same layout and new values."""
        return ParamSpace(np.array(values, dtype=np.float64), self.layout)


@dataclass(frozen=True, eq=False)
class Mask:
    """Active (non-pruned) flag of every flat index."""

    active: BoolArray

    def __post_init__(self) -> None:
        """Freeze the flags."""
        active = np.array(self.active, dtype=bool)
        active.setflags(write=False)
        object.__setattr__(self, "active", active)

    @classmethod
    def dense(cls, space: ParamSpace) -> Mask:
        """Return the all-active mask of a space."""
        return cls(np.ones(space.size, dtype=bool))

    @classmethod
    def from_zeros(cls, space: ParamSpace) -> Mask:
        """Return the mask marking exactly-zero prunable weights as pruned."""
        return cls(~(space.prunable & (space.values == 0.0)))

    def check(self, space: ParamSpace) -> None:
        """Raise unless the mask fits the space and keeps biases active."""
        space.layout.check_length(self.active, "mask")
        if not np.all(self.active[~space.prunable]):
            msg = "mask deactivates a non-prunable parameter"
            raise WoodPruneStructuralError(msg)

    def with_removed(self, indices: Iterable[int] | IndexArray) -> Mask:
        """Return a mask with the given indices additionally pruned."""
        active = self.active.copy()
        active[np.fromiter(indices, dtype=np.int64)] = False
        return Mask(active)

    def apply(self, space: ParamSpace) -> ParamSpace:
        """Return the space with every pruned weight set to exactly zero."""
        self.check(space)
        return space.with_values(np.where(self.active, space.values, 0.0))

    def pruned_count(self, space: ParamSpace) -> int:
        """Number of pruned prunable indices."""
        return int(np.count_nonzero(space.prunable & ~self.active))


def sparsity_of(mask: Mask, space: ParamSpace) -> float:
    """Fraction of prunable weights pruned by a mask.

    Biases are excluded from both the numerator and the denominator.

    Raises
    ------
        WoodPruneStructuralError: The mask length differs from d.

    """
    space.layout.check_length(mask.active, "mask")
    total = int(np.count_nonzero(space.prunable))
    if total == 0:
        return 0.0
    return mask.pruned_count(space) / total


def layer_sparsity(mask: Mask, space: ParamSpace) -> list[LayerSparsity]:
    """Return the per-layer sparsity table of the prunable layers."""
    space.layout.check_length(mask.active, "mask")
    table: list[LayerSparsity] = []
    for segment in space.layout.weight_segments():
        remaining = int(np.count_nonzero(mask.active[segment.span]))
        table.append(
            LayerSparsity(
                layer=segment.name,
                dense_params=segment.length,
                remaining_params=remaining,
                sparsity=(
                    (segment.length - remaining) / segment.length
                    if segment.length
                    else 0.0
                ),
            )
        )
    return table


@dataclass(frozen=True, kw_only=True)
class FlopEntry:
    """FLOP cost of one layer measured against its active parameters."""

    layer: str
    flops_total: float
    active_params: int


@dataclass(frozen=True)
class FlopTable:
    """Per-layer FLOP accounting."""

    entries: tuple[FlopEntry, ...]

    @classmethod
    def from_layout(
        cls,
        layout: LayerLayout,
        mask: Mask | None = None,
        dense_flops: Mapping[str, float] | None = None,
    ) -> FlopTable:
        """Account FLOPs of every dense layer against its active weights.

        A dense layer costs 2 x fan_in x fan_out FLOPs unless `dense_flops`
        overrides it; the cost shrinks in proportion to the pruned weights.
        Layers without any active weight are left out of the table.

        Args:
        ----
            layout: The layout to account.
            mask: Current mask; all weights are active when omitted.
            dense_flops: Optional per-layer dense FLOP cost overrides.

        Returns:
        -------
            The FLOP table.

        """
        overrides = dict(dense_flops or {})
        unknown = set(overrides) - {s.name for s in layout.weight_segments()}
        if unknown:
            msg = f"FLOP overrides name unknown layers: {sorted(unknown)}"
            raise WoodPruneStructuralError(msg)
        entries: list[FlopEntry] = []
        for segment in layout.weight_segments():
            active = (
                segment.length
                if mask is None
                else int(np.count_nonzero(mask.active[segment.span]))
            )
            if active == 0:
                continue
            dense = overrides.get(
                segment.name, FLOPS_PER_DENSE_WEIGHT * segment.fan_in * segment.fan_out
            )
            entries.append(
                FlopEntry(
                    layer=segment.name,
                    flops_total=dense * active / segment.length,
                    active_params=active,
                )
            )
        return cls(tuple(entries))


def flops_per_param(table: FlopTable, layout: LayerLayout) -> FloatArray:
    """Spread every layer's FLOPs-per-active-parameter over its indices.

    Indices of layers missing from the table (biases, fully pruned layers)
    get the neutral value 1.0.

    Raises
    ------
        WoodPruneDegenerateLayerError: A layer in the table has no active
            parameters.

    """
    vector = np.ones(layout.size)
    for entry in table.entries:
        segment = layout.segment(entry.layer)
        if entry.active_params <= 0:
            msg = f"layer {entry.layer} has no active parameters"
            raise WoodPruneDegenerateLayerError(msg)
        vector[segment.span] = entry.flops_total / entry.active_params
    return vector

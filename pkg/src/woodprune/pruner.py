"""Optimal Brain Surgeon statistics, selection and pruning directions."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from datetime import timezone as _timezone
from typing import TYPE_CHECKING, TypeVar

import numpy as np

from .const import (
    LOGGER,
    GroupMode,
    PruneMethod,
    PruneScope,
    RngStream,
)
from .core import (
    FlopTable,
    Mask,
    ParamSpace,
    count_for_fraction,
    flops_per_param,
    layer_sparsity,
    rng_for,
    sparsity_of,
)
from .exceptions import (
    WoodPruneConfigError,
    WoodPruneNumericError,
    WoodPruneStructuralError,
)
from .fisher import (
    ChunkedFisherInverse,
    DiagonalFisher,
    collect_grad_samples,
    diagonal_fisher,
    fisher_matvec,
    hutchinson_diagonal,
    ihvp,
    inverse_diagonal,
    woodfisher_build,
)
from .model import accuracy, mean_loss
from .models import FisherConfig, PruneReport, RunConfig, ScanPoint

UTC = _timezone.utc

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    from numpy.typing import NDArray

    from .core import LayerLayout
    from .io import Dataset
    from .model import MlpModel

    FloatArray = NDArray[np.float64]
    BoolArray = NDArray[np.bool_]
    IndexArray = NDArray[np.int64]

# Key of a joint (network-wide) removal plan.
JOINT_KEY = "*"

_T = TypeVar("_T")


@dataclass(frozen=True, eq=False)
class PruneStat:
    """Pruning statistic of every flat index.

    Indices that cannot be selected (biases, already pruned weights) hold the
    +inf sentinel.
    """

    rho: FloatArray
    method: PruneMethod


@dataclass(frozen=True, eq=False, kw_only=True)
class PruneDecision:
    """Selected indices together with the weight update that removes them."""

    removed: IndexArray
    delta_w: FloatArray
    predicted_delta_loss: float

    def apply(self, space: ParamSpace, mask: Mask) -> tuple[ParamSpace, Mask]:
        """Apply the update, zeroing removed and previously pruned weights."""
        mask = mask.with_removed(self.removed)
        values = space.values + self.delta_w
        values[self.removed] = 0.0
        return space.with_values(np.where(mask.active, values, 0.0)), mask


@dataclass(frozen=True, kw_only=True)
class GroupSpec:
    """Disjoint groups of prunable indices removed together."""

    groups: tuple[tuple[int, ...], ...]
    mode: GroupMode = GroupMode.CORRELATED

    def check(self, space: ParamSpace) -> None:
        """Raise unless the groups are non-empty, disjoint and prunable."""
        seen: set[int] = set()
        for number, group in enumerate(self.groups):
            if not group:
                msg = f"group {number} is empty"
                raise WoodPruneStructuralError(msg)
            for index in group:
                if not 0 <= index < space.size or not space.prunable[index]:
                    msg = f"group {number} holds non-prunable index {index}"
                    raise WoodPruneStructuralError(msg)
                if index in seen:
                    msg = f"index {index} appears in more than one group"
                    raise WoodPruneStructuralError(msg)
                seen.add(index)


def _selectable(space: ParamSpace, mask: Mask | None) -> BoolArray:
    if mask is None:
        return space.prunable.copy()
    mask.check(space)
    return space.prunable & mask.active


def _finalize(
    rho: FloatArray,
    selectable: BoolArray,
    method: PruneMethod,
) -> PruneStat:
    if np.any(np.isnan(rho[selectable])):
        msg = f"{method.value} statistic contains NaN"
        raise WoodPruneNumericError(msg)
    return PruneStat(np.where(selectable, rho, np.inf), method)


def _checked_diagonal(
    inv: ChunkedFisherInverse,
    indices: BoolArray | IndexArray,
) -> FloatArray:
    diagonal = inverse_diagonal(inv)
    picked = diagonal[indices]
    if not np.all(np.isfinite(picked) & (picked > 0)):
        msg = "inverse Fisher diagonal is not strictly positive"
        raise WoodPruneNumericError(msg)
    return diagonal


def stat_woodfisher(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    mask: Mask | None = None,
) -> PruneStat:
    """Return rho_q = w_q^2 / (2 [H^-1]_qq) at every active prunable index.

    Raises
    ------
        WoodPruneNumericError: An inverse diagonal entry is not positive.

    """
    selectable = _selectable(space, mask)
    diagonal = _checked_diagonal(inv, selectable)
    rho = space.values**2 / (2.0 * diagonal)
    return _finalize(rho, selectable, PruneMethod.WOODFISHER)


def stat_obd(
    space: ParamSpace,
    hess_diag: FloatArray,
    mask: Mask | None = None,
) -> PruneStat:
    """Return rho_q = w_q^2 [H]_qq / 2 from a Hessian diagonal."""
    hess_diag = np.asarray(hess_diag, dtype=np.float64)
    space.layout.check_length(hess_diag, "Hessian diagonal")
    if not np.all(np.isfinite(hess_diag)):
        msg = "Hessian diagonal contains non-finite entries"
        raise WoodPruneNumericError(msg)
    selectable = _selectable(space, mask)
    return _finalize(0.5 * space.values**2 * hess_diag, selectable, PruneMethod.OBD)


def stat_magnitude(space: ParamSpace, mask: Mask | None = None) -> PruneStat:
    """Return w_q^2 / 2, the statistic under an identity Hessian."""
    selectable = _selectable(space, mask)
    return _finalize(space.values**2 / 2.0, selectable, PruneMethod.MAGNITUDE)


def stat_diagonal_fisher(
    space: ParamSpace,
    fisher: DiagonalFisher,
    mask: Mask | None = None,
) -> PruneStat:
    """Return w_q^2 F_qq / 2 from the diagonal empirical Fisher."""
    space.layout.check_length(fisher.diag, "Fisher diagonal")
    selectable = _selectable(space, mask)
    return _finalize(
        0.5 * space.values**2 * fisher.diag,
        selectable,
        PruneMethod.DIAGONAL_FISHER,
    )


def stat_woodtaylor(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    grad: FloatArray,
    mask: Mask | None = None,
) -> PruneStat:
    """Return the WoodFisher statistic corrected by the first-order term.

    With z = H^-1 grad (one shared product), rho_q equals
    w_q^2 / (2 D_q) + z_q^2 / (2 D_q) - w_q z_q / D_q where D_q = [H^-1]_qq.
    """
    selectable = _selectable(space, mask)
    diagonal = _checked_diagonal(inv, selectable)
    newton = ihvp(inv, grad)
    weights = space.values
    rho = (
        weights**2 / (2.0 * diagonal)
        + 0.5 * newton**2 / diagonal
        - weights * newton / diagonal
    )
    return _finalize(rho, selectable, PruneMethod.WOODTAYLOR)


def _group_curvature(inv: ChunkedFisherInverse, group: IndexArray) -> float:
    """Return e_Q^T H^-1 e_Q under the block-diagonal inverse."""
    owners = inv.owner[group]
    total = float(np.count_nonzero(owners < 0)) / inv.damp
    chunk_numbers = np.unique(owners[owners >= 0])
    if chunk_numbers.shape[0] > 1:
        LOGGER.debug("Group spans %d chunks", chunk_numbers.shape[0])
    for number in chunk_numbers:
        chunk = inv.chunks[number]
        local = group[owners == number] - chunk.start
        total += float(chunk.inverse[np.ix_(local, local)].sum())
    return total


def stat_structured(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    groups: GroupSpec,
) -> FloatArray:
    """Return one statistic per group.

    In sum mode the per-parameter WoodFisher statistics are added up. In
    correlated mode the group is removed under the single combined constraint
    e_Q^T dw + w^T e_Q = 0, giving (w^T e_Q)^2 / (2 e_Q^T H^-1 e_Q).

    Raises
    ------
        WoodPruneStructuralError: A group is empty, overlaps another or holds
            a non-prunable index.
        WoodPruneNumericError: A group has non-positive curvature.

    """
    groups.check(space)
    if groups.mode is GroupMode.SUM:
        rho = stat_woodfisher(space, inv).rho
        return np.array([rho[list(group)].sum() for group in groups.groups])
    values: list[float] = []
    for number, group in enumerate(groups.groups):
        indices = np.asarray(group, dtype=np.int64)
        curvature = _group_curvature(inv, indices)
        if not curvature > 0:
            msg = f"group {number} has non-positive curvature {curvature}"
            raise WoodPruneNumericError(msg)
        values.append(space.values[indices].sum() ** 2 / (2.0 * curvature))
    return np.array(values)


def flops_normalize(stat: PruneStat, fpp: FloatArray, beta: float) -> PruneStat:
    """Divide the statistic by (flops per parameter)^beta.

    A beta of 0 returns the statistic unchanged. Negative values, which only
    WoodTaylor produces, are multiplied by the factor instead, so a weight
    with more FLOPs per parameter always ranks as cheaper to remove.

    Raises
    ------
        WoodPruneConfigError: beta is negative.
        WoodPruneNumericError: A selectable index has non-positive FLOPs.

    """
    if beta < 0:
        msg = f"beta must be non-negative, got {beta}"
        raise WoodPruneConfigError(msg)
    if beta == 0:
        return stat
    fpp = np.asarray(fpp, dtype=np.float64)
    if fpp.shape != stat.rho.shape:
        msg = f"FLOPs vector has shape {fpp.shape}, expected {stat.rho.shape}"
        raise WoodPruneStructuralError(msg)
    selectable = np.isfinite(stat.rho)
    if not np.all(fpp[selectable] > 0):
        msg = "FLOPs per parameter must be positive at every selectable index"
        raise WoodPruneNumericError(msg)
    rho = np.full_like(stat.rho, np.inf)
    raw, scale = stat.rho[selectable], fpp[selectable] ** beta
    rho[selectable] = np.where(raw >= 0, raw / scale, raw * scale)
    return PruneStat(rho, stat.method)


def removal_plan(
    target: float,
    scope: PruneScope,
    layout: LayerLayout,
    mask: Mask,
) -> dict[str, int]:
    """Return the number of pruned weights each part must reach.

    Joint plans hold a single network-wide count under JOINT_KEY; independent
    plans hold one count per dense layer.

    Raises
    ------
        WoodPruneConfigError: The target is outside [0, 1] or below the
            current sparsity.

    """
    if not 0.0 <= target <= 1.0:
        msg = f"target sparsity must lie in [0, 1], got {target}"
        raise WoodPruneConfigError(msg)
    segments = layout.weight_segments()
    pruned = {
        segment.name: int(np.count_nonzero(~mask.active[segment.span]))
        for segment in segments
    }
    total = count_for_fraction(target, sum(segment.length for segment in segments))
    if total < sum(pruned.values()):
        msg = (
            f"target sparsity {target} is below the current "
            f"{sum(pruned.values())} pruned weights"
        )
        raise WoodPruneConfigError(msg)
    if scope is PruneScope.JOINT:
        return {JOINT_KEY: total}
    return {
        segment.name: max(
            pruned[segment.name], count_for_fraction(target, segment.length)
        )
        for segment in segments
    }


def _pruned_counts(
    plan: Mapping[str, int],
    layout: LayerLayout,
    mask: Mask,
) -> dict[str, int]:
    prunable = layout.prunable()
    counts: dict[str, int] = {}
    for key in plan:
        if key == JOINT_KEY:
            counts[key] = int(np.count_nonzero(prunable & ~mask.active))
        else:
            counts[key] = int(np.count_nonzero(~mask.active[layout.segment(key).span]))
    return counts


def _smallest(stat: PruneStat, candidates: IndexArray, count: int) -> IndexArray:
    if count > candidates.shape[0]:
        msg = (
            f"cannot remove {count} weights, only {candidates.shape[0]} are active"
        )
        raise WoodPruneConfigError(msg)
    # Ties are broken by ascending index.
    order = np.lexsort((candidates, stat.rho[candidates]))
    return candidates[order[:count]]


def select_to_plan(
    stat: PruneStat,
    plan: Mapping[str, int],
    layout: LayerLayout,
    mask: Mask,
) -> IndexArray:
    """Select the lowest-statistic active weights until the plan is met."""
    layout.check_length(stat.rho, "statistic")
    selectable = layout.prunable() & mask.active
    current = _pruned_counts(plan, layout, mask)
    picked: list[IndexArray] = []
    for key, goal in plan.items():
        need = goal - current[key]
        if need < 0:
            msg = f"plan for {key} is below its {current[key]} pruned weights"
            raise WoodPruneConfigError(msg)
        if key == JOINT_KEY:
            candidates = np.flatnonzero(selectable)
        else:
            segment = layout.segment(key)
            candidates = segment.offset + np.flatnonzero(selectable[segment.span])
        picked.append(_smallest(stat, candidates.astype(np.int64), need))
    if not picked:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(picked))


def select(
    stat: PruneStat,
    target: float,
    scope: PruneScope,
    layout: LayerLayout,
    mask: Mask,
) -> IndexArray:
    """Return the indices to remove so the target sparsity is reached.

    Joint scope takes the globally smallest statistics; independent scope
    brings every dense layer to the target on its own. Counts are rounded
    down and ties go to the lower index.

    Raises
    ------
        WoodPruneConfigError: The target is unreachable or below the current
            sparsity.

    """
    return select_to_plan(stat, removal_plan(target, scope, layout, mask), layout, mask)


def _combine_columns(
    inv: ChunkedFisherInverse,
    indices: IndexArray,
    coefficients: FloatArray,
) -> FloatArray:
    """Return sum_q coefficient_q H^-1 e_q."""
    result = np.zeros(inv.size)
    owners = inv.owner[indices]
    outside = owners < 0
    result[indices[outside]] += coefficients[outside] / inv.damp
    for number in np.unique(owners[~outside]):
        chunk = inv.chunks[number]
        inside = owners == number
        local = indices[inside] - chunk.start
        result[chunk.span] += chunk.inverse[:, local] @ coefficients[inside]
    return result


def _removal_indices(
    space: ParamSpace,
    removed: Sequence[int] | IndexArray,
    mask: Mask | None,
) -> IndexArray:
    indices = np.asarray(removed, dtype=np.int64).reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= space.size):
        msg = "removed index out of range"
        raise WoodPruneStructuralError(msg)
    if mask is not None and not np.all(mask.active[indices]):
        msg = "cannot remove an already pruned weight"
        raise WoodPruneStructuralError(msg)
    return indices


def _finish_direction(
    delta: FloatArray,
    space: ParamSpace,
    removed: IndexArray,
    mask: Mask | None,
) -> FloatArray:
    delta[removed] = -space.values[removed]
    if mask is not None:
        delta[~mask.active] = 0.0
    return delta


def pruning_direction(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    removed: Sequence[int] | IndexArray,
    mask: Mask | None = None,
) -> FloatArray:
    """Return the summed optimal perturbation removing the given weights.

    Each removal contributes -w_q H^-1 e_q / [H^-1]_qq. The removed entries
    are then set to -w_q exactly and previously pruned entries to zero.
    """
    indices = _removal_indices(space, removed, mask)
    diagonal = _checked_diagonal(inv, indices)
    coefficients = space.values[indices] / diagonal[indices]
    delta = -_combine_columns(inv, indices, coefficients)
    return _finish_direction(delta, space, indices, mask)


def woodtaylor_direction(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    grad: FloatArray,
    removed: Sequence[int] | IndexArray,
    mask: Mask | None = None,
) -> FloatArray:
    """Return the WoodTaylor perturbation, including one Newton step.

    Each removal contributes -(w_q - z_q) H^-1 e_q / [H^-1]_qq with
    z = H^-1 grad, and the shared -z term is added once.
    """
    indices = _removal_indices(space, removed, mask)
    diagonal = _checked_diagonal(inv, indices)
    newton = ihvp(inv, grad)
    coefficients = (space.values[indices] - newton[indices]) / diagonal[indices]
    delta = -_combine_columns(inv, indices, coefficients) - newton
    return _finish_direction(delta, space, indices, mask)


def structured_direction(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    group: Sequence[int] | IndexArray,
    mask: Mask | None = None,
) -> FloatArray:
    """Return -(w^T e_Q) H^-1 e_Q / (e_Q^T H^-1 e_Q) for one group.

    Raises
    ------
        WoodPruneNumericError: The group curvature is not positive.

    """
    indices = _removal_indices(space, group, mask)
    if not indices.size:
        msg = "cannot build the direction of an empty group"
        raise WoodPruneStructuralError(msg)
    column = _combine_columns(inv, indices, np.ones(indices.shape[0]))
    curvature = float(column[indices].sum())
    if not curvature > 0:
        msg = f"group curvature {curvature} is not positive"
        raise WoodPruneNumericError(msg)
    delta = -float(space.values[indices].sum()) * column / curvature
    if mask is not None:
        delta[~mask.active] = 0.0
    return delta


def structured_prune(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    groups: GroupSpec,
    target: float,
    mask: Mask | None = None,
) -> PruneDecision:
    """Remove whole groups, cheapest first, without exceeding the target.

    The group directions are summed and the removed coordinates re-zeroed.
    """
    mask = mask or Mask.dense(space)
    plan = removal_plan(target, PruneScope.JOINT, space.layout, mask)
    return _structured_to_count(space, inv, groups, plan[JOINT_KEY], mask)


def _structured_to_count(
    space: ParamSpace,
    inv: ChunkedFisherInverse,
    groups: GroupSpec,
    goal: int,
    mask: Mask,
) -> PruneDecision:
    need = goal - mask.pruned_count(space)
    rho = stat_structured(space, inv, groups)
    eligible = [
        number
        for number, group in enumerate(groups.groups)
        if np.all(mask.active[list(group)])
    ]
    eligible.sort(key=lambda number: (rho[number], number))
    chosen: list[int] = []
    count = 0
    for number in eligible:
        size = len(groups.groups[number])
        if count + size <= need:
            chosen.append(number)
            count += size
    delta = np.zeros(space.size)
    removed: list[int] = []
    for number in chosen:
        delta += structured_direction(space, inv, groups.groups[number], mask)
        removed.extend(groups.groups[number])
    indices = np.sort(np.asarray(removed, dtype=np.int64))
    return PruneDecision(
        removed=indices,
        delta_w=_finish_direction(delta, space, indices, mask),
        predicted_delta_loss=float(sum(rho[number] for number in chosen)),
    )


@dataclass(frozen=True, eq=False, kw_only=True)
class Curvature:
    """Second-order information gathered for one pruning stage."""

    inverse: ChunkedFisherInverse | None = None
    diagonal: DiagonalFisher | None = None
    hess_diag: FloatArray | None = None
    grad: FloatArray | None = None


def _require(value: _T | None, what: str) -> _T:
    if value is None:
        msg = f"pruning needs {what}, which was not estimated"
        raise WoodPruneConfigError(msg)
    return value


def pruning_statistic(
    method: PruneMethod,
    space: ParamSpace,
    mask: Mask,
    curvature: Curvature,
) -> PruneStat:
    """Compute the statistic of a method from the gathered curvature."""
    match method:
        case PruneMethod.WOODFISHER:
            return stat_woodfisher(
                space, _require(curvature.inverse, "an inverse"), mask
            )
        case PruneMethod.WOODTAYLOR:
            return stat_woodtaylor(
                space,
                _require(curvature.inverse, "an inverse"),
                _require(curvature.grad, "a gradient"),
                mask,
            )
        case PruneMethod.DIAGONAL_FISHER:
            return stat_diagonal_fisher(
                space, _require(curvature.diagonal, "a diagonal Fisher"), mask
            )
        case PruneMethod.OBD:
            return stat_obd(space, _require(curvature.hess_diag, "a Hessian"), mask)
        case _:
            return stat_magnitude(space, mask)


def pruning_decision(
    method: PruneMethod,
    space: ParamSpace,
    mask: Mask,
    curvature: Curvature,
    stat: PruneStat,
    removed: IndexArray,
) -> PruneDecision:
    """Build the weight update of a method for the selected indices.

    The predicted loss change is the sum of the raw statistics of the
    removed weights.
    """
    match method:
        case PruneMethod.WOODFISHER:
            delta = pruning_direction(
                space, _require(curvature.inverse, "an inverse"), removed, mask
            )
        case PruneMethod.WOODTAYLOR:
            delta = woodtaylor_direction(
                space,
                _require(curvature.inverse, "an inverse"),
                _require(curvature.grad, "a gradient"),
                removed,
                mask,
            )
        case _:
            # Diagonal curvature makes the optimal update a plain zeroing.
            delta = _finish_direction(np.zeros(space.size), space, removed, mask)
    return PruneDecision(
        removed=removed,
        delta_w=delta,
        predicted_delta_loss=float(stat.rho[removed].sum()),
    )


@dataclass(kw_only=True)
class Pruner:
    """Pruning driver shared by one-shot and gradual pruning."""

    method: PruneMethod
    scope: PruneScope = PruneScope.JOINT
    fisher: FisherConfig = field(default_factory=FisherConfig)
    seed: int = 0
    threads: int = 1
    beta: float = 0.0
    dense_flops: Mapping[str, float] | None = None
    groups: GroupSpec | None = None

    def __post_init__(self) -> None:
        """Resolve the effective scope and check the combination."""
        if self.method is PruneMethod.GLOBAL_MAGNITUDE or self.groups is not None:
            self.scope = PruneScope.JOINT
        if self.groups is not None and self.method is not PruneMethod.WOODFISHER:
            msg = "structured groups are only supported with woodfisher"
            raise WoodPruneConfigError(msg)
        if self.beta < 0:
            msg = f"beta must be non-negative, got {self.beta}"
            raise WoodPruneConfigError(msg)

    def estimate(
        self,
        model: MlpModel,
        dataset: Dataset,
        *,
        key: int,
    ) -> Curvature:
        """Gather fresh curvature information at the current weights.

        Args:
        ----
            model: The network, possibly already partially pruned.
            dataset: Examples used for the estimate.
            key: Sub-stream key (stage or epoch) making the draw unique.

        Returns:
        -------
            The curvature needed by the configured method.

        """
        method = self.method
        if method in (PruneMethod.MAGNITUDE, PruneMethod.GLOBAL_MAGNITUDE):
            return Curvature()
        if method is PruneMethod.OBD:
            estimate = hutchinson_diagonal(
                model,
                dataset,
                self.fisher,
                rng_for(self.seed, RngStream.HUTCHINSON, key),
            )
            return Curvature(hess_diag=np.maximum(estimate, 0.0) + self.fisher.damp)
        samples = collect_grad_samples(
            model,
            dataset,
            self.fisher,
            rng_for(self.seed, RngStream.FISHER_SAMPLING, key),
            label_rng=rng_for(self.seed, RngStream.LABEL_SAMPLING, key),
        )
        if method is PruneMethod.DIAGONAL_FISHER:
            return Curvature(diagonal=diagonal_fisher(samples, self.fisher.damp))
        inverse = woodfisher_build(
            samples, model.layout, self.fisher, threads=self.threads
        )
        grad = None
        if method is PruneMethod.WOODTAYLOR:
            grad = np.mean([sample.grad for sample in samples], axis=0)
        return Curvature(inverse=inverse, grad=grad)

    def step(
        self,
        model: MlpModel,
        dataset: Dataset,
        mask: Mask,
        plan: Mapping[str, int],
        *,
        key: int,
    ) -> tuple[MlpModel, Mask, float]:
        """Prune once up to a removal plan and apply the update.

        Returns
        -------
            The updated model, its mask and the predicted loss increase.

        """
        if _pruned_counts(plan, model.layout, mask) == dict(plan):
            return model, mask, 0.0
        curvature = self.estimate(model, dataset, key=key)
        space = model.space
        if self.groups is not None:
            decision = _structured_to_count(
                space,
                _require(curvature.inverse, "an inverse"),
                self.groups,
                plan[JOINT_KEY],
                mask,
            )
        else:
            stat = pruning_statistic(self.method, space, mask, curvature)
            ranked = stat
            if self.beta:
                table = FlopTable.from_layout(model.layout, mask, self.dense_flops)
                ranked = flops_normalize(
                    stat, flops_per_param(table, model.layout), self.beta
                )
            removed = select_to_plan(ranked, plan, model.layout, mask)
            decision = pruning_decision(
                self.method, space, mask, curvature, stat, removed
            )
        space, mask = decision.apply(space, mask)
        LOGGER.info(
            "Removed %d weights with %s, sparsity now %.4f",
            decision.removed.shape[0],
            self.method.value,
            sparsity_of(mask, space),
        )
        return model.with_values(space.values), mask, decision.predicted_delta_loss

    def prune(  # noqa: PLR0913
        self,
        model: MlpModel,
        dataset: Dataset,
        mask: Mask,
        target: float,
        *,
        steps: int = 1,
        key: int = 0,
    ) -> tuple[MlpModel, Mask, float]:
        """Prune to a target sparsity in `steps` recomputation stages.

        The number of pruned weights grows linearly over the stages and the
        curvature is re-estimated on the partially pruned model before each.

        Returns
        -------
            The pruned model, its mask and the summed predicted loss increase.

        """
        if steps < 1:
            msg = f"recompute steps must be at least 1, got {steps}"
            raise WoodPruneConfigError(msg)
        final = removal_plan(target, self.scope, model.layout, mask)
        start = _pruned_counts(final, model.layout, mask)
        predicted = 0.0
        for stage in range(1, steps + 1):
            plan = {
                part: start[part] + (final[part] - start[part]) * stage // steps
                for part in final
            }
            model, mask, delta = self.step(
                model, dataset, mask, plan, key=key * steps + stage
            )
            predicted += delta
        return model, mask, predicted


def one_shot_prune(  # noqa: PLR0913
    model: MlpModel,
    dataset: Dataset,
    cfg: FisherConfig,
    target: float,
    scope: PruneScope,
    recompute_steps: int,
    method: PruneMethod,
    *,
    test: Dataset | None = None,
    mask: Mask | None = None,
    seed: int = 0,
    threads: int = 1,
    beta: float = 0.0,
    dense_flops: Mapping[str, float] | None = None,
    groups: GroupSpec | None = None,
    config: RunConfig | None = None,
) -> tuple[MlpModel, PruneReport]:
    """Prune a trained model in one shot, without retraining.

    Args:
    ----
        model: The trained network.
        dataset: Examples used to estimate curvature.
        cfg: Fisher settings.
        target: Final sparsity over the prunable weights.
        scope: Joint (global) or independent (layer-wise) selection.
        recompute_steps: Stages, each preceded by a fresh curvature estimate.
        method: Pruning statistic.
        test: Held-out set for the accuracies in the report; defaults to
            `dataset`.
        mask: Starting mask; pruned weights of the model when omitted.
        seed: Run seed for all sampling.
        threads: Worker threads for the chunk builds.
        beta: FLOPs exponent; 0 leaves the statistic unchanged.
        dense_flops: Optional per-layer dense FLOP cost overrides.
        groups: Remove whole groups instead of single weights.
        config: Resolved run configuration embedded in the report.

    Returns:
    -------
        The pruned model and its report.

    """
    evaluation = test if test is not None else dataset
    mask = mask or Mask.from_zeros(model.space)
    pruner = Pruner(
        method=method,
        scope=scope,
        fisher=cfg,
        seed=seed,
        threads=threads,
        beta=beta,
        dense_flops=dense_flops,
        groups=groups,
    )
    before = accuracy(model, evaluation)
    pruned, mask, predicted = pruner.prune(
        model, dataset, mask, target, steps=recompute_steps
    )
    report = PruneReport(
        method=method,
        scope=pruner.scope,
        target=target,
        sparsity=sparsity_of(mask, pruned.space),
        layers=layer_sparsity(mask, pruned.space),
        accuracy_before=before,
        accuracy_after=accuracy(pruned, evaluation),
        predicted_delta_loss=predicted,
        seed=seed,
        recompute_steps=recompute_steps,
        beta=beta,
        config=config,
        created=datetime.now(tz=UTC),
    )
    return pruned, report


def quad_scan_curve(
    loss_fn: Callable[[FloatArray], float],
    weights: FloatArray,
    delta_w: FloatArray,
    steps: int,
    matvec: Callable[[FloatArray], FloatArray],
) -> list[ScanPoint]:
    """Compare a loss along w + t dw with its local quadratic model.

    The model is L(w) + t^2 dw^T H dw / 2 for t evenly spaced on [0, 1].
    """
    if steps < 1:
        msg = f"steps must be at least 1, got {steps}"
        raise WoodPruneConfigError(msg)
    base = loss_fn(weights)
    curvature = float(delta_w @ matvec(delta_w))
    points: list[ScanPoint] = []
    for t in np.linspace(0.0, 1.0, steps) if steps > 1 else np.zeros(1):
        actual = base if t == 0 else loss_fn(weights + t * delta_w)
        points.append(
            ScanPoint(
                t=float(t),
                actual=actual,
                predicted=base + 0.5 * float(t) ** 2 * curvature,
            )
        )
    return points


def quad_scan(
    model: MlpModel,
    dataset: Dataset,
    delta_w: FloatArray,
    steps: int,
    inv: ChunkedFisherInverse,
) -> list[ScanPoint]:
    """Scan the actual loss against the WoodFisher quadratic model.

    The curvature is the dampened empirical Fisher applied through the
    samples stored in `inv`.
    """
    model.layout.check_length(np.asarray(delta_w), "direction")
    return quad_scan_curve(
        lambda values: mean_loss(
            model.with_values(values), dataset.inputs, dataset.labels
        ),
        model.values,
        np.asarray(delta_w, dtype=np.float64),
        steps,
        lambda vector: fisher_matvec(inv, vector),
    )


def layer_direction(  # noqa: PLR0913
    model: MlpModel,
    dataset: Dataset,
    cfg: FisherConfig,
    layer: str,
    sparsity: float,
    *,
    seed: int = 0,
    threads: int = 1,
) -> tuple[FloatArray, ChunkedFisherInverse]:
    """Return the WoodFisher direction pruning one layer to a sparsity.

    Only the chosen layer is chunked; the returned inverse still stores every
    gradient sample so it can serve as the curvature of a scan.
    """
    segment = model.layout.segment(layer)
    if not segment.prunable:
        msg = f"layer {layer} is not prunable"
        raise WoodPruneConfigError(msg)
    samples = collect_grad_samples(
        model,
        dataset,
        cfg,
        rng_for(seed, RngStream.FISHER_SAMPLING, 0),
        label_rng=rng_for(seed, RngStream.LABEL_SAMPLING, 0),
    )
    inverse = woodfisher_build(
        samples, model.layout, cfg, layers={layer}, threads=threads
    )
    mask = Mask.dense(model.space)
    stat = stat_woodfisher(model.space, inverse, mask)
    removed = select_to_plan(
        stat,
        {layer: count_for_fraction(sparsity, segment.length)},
        model.layout,
        mask,
    )
    return pruning_direction(model.space, inverse, removed, mask), inverse

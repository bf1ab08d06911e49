"""Brute-force reference computations for small problems.

Everything here works on explicit dense matrices and relies only on
elementary routines written in this module, so the results are independent
of the chunked code paths they are compared against.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .const import FD_GRADIENT_STEP, FD_HESSIAN_STEP, LOGGER
from .exceptions import (
    WoodPruneConfigError,
    WoodPruneNumericError,
    WoodPruneStructuralError,
)
from .fisher import GradSample
from .model import batch_loss_and_grad, per_example_grads
from .models import CurvatureComparison

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

    from .io import Dataset
    from .model import MlpModel

    FloatArray = NDArray[np.float64]

MAX_DENSE_SIZE = 512
MAX_FD_SIZE = 200
CONDITION_LIMIT = 1e12


def _square(matrix: FloatArray, what: str) -> FloatArray:
    matrix = np.array(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        msg = f"{what} must be a square matrix, got shape {matrix.shape}"
        raise WoodPruneStructuralError(msg)
    return matrix


def dense_empirical_fisher(
    samples: Sequence[GradSample],
    damp: float,
    *,
    size: int | None = None,
) -> FloatArray:
    """Return damp * I + the mean outer product of the gradient samples.

    Raises
    ------
        WoodPruneStructuralError: The samples disagree in length, or there
            are no samples and no `size`.
        WoodPruneConfigError: The matrix would exceed the oracle size.

    """
    if size is None:
        if not samples:
            msg = "size is required when no gradient samples are given"
            raise WoodPruneStructuralError(msg)
        size = samples[0].grad.shape[0]
    if size > MAX_DENSE_SIZE:
        msg = f"dense Fisher of size {size} exceeds the limit of {MAX_DENSE_SIZE}"
        raise WoodPruneConfigError(msg)
    fisher = damp * np.eye(size)
    for sample in samples:
        if sample.grad.shape != (size,):
            msg = f"gradient sample of length {sample.grad.shape[0]}, expected {size}"
            raise WoodPruneStructuralError(msg)
        fisher += np.outer(sample.grad, sample.grad) / len(samples)
    return (fisher + fisher.T) / 2.0


def _eliminate(matrix: FloatArray, rhs: FloatArray) -> FloatArray:
    """Solve matrix @ x = rhs by Gauss-Jordan elimination with partial pivoting.

    Raises
    ------
        WoodPruneNumericError: The matrix is singular to working precision.

    """
    size = matrix.shape[0]
    rhs = np.array(rhs, dtype=np.float64)
    vector = rhs.ndim == 1
    augmented = np.hstack([matrix, rhs[:, None] if vector else rhs])
    tolerance = size * np.finfo(np.float64).eps * max(np.abs(matrix).max(), 1.0)
    for column in range(size):
        pivot = column + int(np.argmax(np.abs(augmented[column:, column])))
        if abs(augmented[pivot, column]) <= tolerance:
            msg = f"matrix is singular (pivot {column} vanishes)"
            raise WoodPruneNumericError(msg)
        if pivot != column:
            augmented[[column, pivot]] = augmented[[pivot, column]]
        augmented[column] /= augmented[column, column]
        others = np.arange(size) != column
        augmented[others] -= np.outer(augmented[others, column], augmented[column])
    solution = augmented[:, size:]
    return solution[:, 0] if vector else solution


def dense_inverse(matrix: FloatArray) -> FloatArray:
    """Invert a well-conditioned square matrix.

    Symmetric inputs give exactly symmetric inverses.

    Raises
    ------
        WoodPruneNumericError: The matrix is singular or its 1-norm
            condition number exceeds 1e12.

    """
    matrix = _square(matrix, "matrix")
    inverse = _eliminate(matrix, np.eye(matrix.shape[0]))
    condition = np.abs(matrix).sum(axis=0).max() * np.abs(inverse).sum(axis=0).max()
    if condition > CONDITION_LIMIT:
        msg = f"matrix is too ill-conditioned to invert (condition {condition:.3g})"
        raise WoodPruneNumericError(msg)
    if np.array_equal(matrix, matrix.T):
        inverse = (inverse + inverse.T) / 2.0
    return inverse


def jacobi_eigh(
    matrix: FloatArray,
    *,
    tolerance: float = 1e-12,
    max_sweeps: int = 100,
) -> tuple[FloatArray, FloatArray]:
    """Return the ascending eigenvalues and eigenvectors of a symmetric matrix.

    Cyclic Jacobi rotations run until the off-diagonal Frobenius norm falls
    below `tolerance` times the norm of the matrix. The eigenvectors are the
    orthonormal columns of the second array.
    """
    work = _square(matrix, "matrix")
    if not np.allclose(work, work.T, rtol=0.0, atol=1e-12):
        msg = "Jacobi eigenvalues need a symmetric matrix"
        raise WoodPruneStructuralError(msg)
    size = work.shape[0]
    vectors = np.eye(size)
    scale = np.sqrt(np.sum(work * work))
    for _ in range(max_sweeps):
        if np.sqrt(np.sum(np.tril(work, -1) ** 2)) <= tolerance * scale:
            break
        for p in range(size - 1):
            for q in range(p + 1, size):
                if work[p, q] == 0.0:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * work[p, q])
                tangent = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    tangent = -tangent
                cosine = 1.0 / np.sqrt(tangent * tangent + 1.0)
                sine = tangent * cosine
                for target in (work, vectors):
                    col_p, col_q = target[:, p].copy(), target[:, q].copy()
                    target[:, p] = cosine * col_p - sine * col_q
                    target[:, q] = sine * col_p + cosine * col_q
                row_p, row_q = work[p].copy(), work[q].copy()
                work[p] = cosine * row_p - sine * row_q
                work[q] = sine * row_p + cosine * row_q
                work[p, q] = work[q, p] = 0.0
    else:
        msg = f"Jacobi iteration did not converge in {max_sweeps} sweeps"
        raise WoodPruneNumericError(msg)
    order = np.argsort(np.diag(work), kind="stable")
    return np.diag(work)[order], vectors[:, order]


def jacobi_eigenvalues(
    matrix: FloatArray,
    *,
    tolerance: float = 1e-12,
    max_sweeps: int = 100,
) -> FloatArray:
    """Return the ascending eigenvalues of a symmetric matrix."""
    return jacobi_eigh(matrix, tolerance=tolerance, max_sweeps=max_sweeps)[0]


def _require_spd(hessian: FloatArray) -> FloatArray:
    hessian = _square(hessian, "Hessian")
    if jacobi_eigenvalues(hessian)[0] <= 0:
        msg = "Hessian is not positive definite"
        raise WoodPruneNumericError(msg)
    return hessian


def kkt_solve(
    hessian: FloatArray,
    grad: FloatArray,
    constraints: FloatArray,
    bounds: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    """Minimize x^T H x / 2 + g^T x subject to A x = b.

    The KKT system [[H, A^T], [A, 0]] [x; nu] = [-g; b] is solved directly,
    so stationarity reads H x + g + A^T nu = 0.

    Returns
    -------
        The minimizer x and the multipliers nu.

    """
    hessian = _square(hessian, "Hessian")
    constraints = np.atleast_2d(np.asarray(constraints, dtype=np.float64))
    size, rows = hessian.shape[0], constraints.shape[0]
    if constraints.shape[1] != size:
        msg = f"constraint matrix has {constraints.shape[1]} columns, expected {size}"
        raise WoodPruneStructuralError(msg)
    system = np.zeros((size + rows, size + rows))
    system[:size, :size] = hessian
    system[size:, :size] = constraints
    system[:size, size:] = constraints.T
    rhs = np.concatenate(
        [-np.asarray(grad, dtype=np.float64), np.atleast_1d(bounds).astype(np.float64)]
    )
    solution = _eliminate(system, rhs)
    return solution[:size], solution[size:]


def exact_single_removal(
    weights: FloatArray,
    hessian: FloatArray,
) -> tuple[int, FloatArray, FloatArray]:
    """Solve the single-weight removal problem exactly for every index.

    For each q, minimize dw^T H dw / 2 subject to dw_q + w_q = 0.

    Returns
    -------
        The best index (lowest index among equal losses), the loss increase
        of every removal and the matching perturbations as rows.

    """
    hessian = _require_spd(hessian)
    weights = np.asarray(weights, dtype=np.float64)
    size = weights.shape[0]
    losses = np.empty(size)
    deltas = np.empty((size, size))
    zero = np.zeros(size)
    for q in range(size):
        delta, _ = kkt_solve(hessian, zero, np.eye(size)[q], -weights[q])
        deltas[q] = delta
        losses[q] = 0.5 * delta @ hessian @ delta
    return int(np.argmin(losses)), losses, deltas


def exact_pair_removal(
    weights: FloatArray,
    hessian: FloatArray,
    first: int,
    second: int,
) -> tuple[float, float, FloatArray, float]:
    """Remove two weights at once with the exact pair multipliers.

    The multipliers solve the 2x2 system formed by the matching entries of
    the inverse Hessian, and dw = -l1 H^-1 e_q1 - l2 H^-1 e_q2.

    Returns
    -------
        Both multipliers, the perturbation and the loss increase.

    """
    if first == second:
        msg = f"pair removal needs two distinct indices, got {first} twice"
        raise WoodPruneStructuralError(msg)
    weights = np.asarray(weights, dtype=np.float64)
    inverse = dense_inverse(_require_spd(hessian))
    pair = [first, second]
    multipliers = _eliminate(inverse[np.ix_(pair, pair)], weights[pair])
    delta = -inverse[:, pair] @ multipliers
    delta_loss = 0.5 * float(multipliers @ weights[pair])
    return float(multipliers[0]), float(multipliers[1]), delta, delta_loss


def fd_gradient(
    loss: Callable[[FloatArray], float],
    point: FloatArray,
    *,
    step: float = FD_GRADIENT_STEP,
    indices: Sequence[int] | None = None,
) -> FloatArray:
    """Central finite-difference gradient, optionally at selected indices only."""
    point = np.asarray(point, dtype=np.float64)
    chosen = range(point.shape[0]) if indices is None else indices
    grad = np.zeros(len(chosen))
    for number, index in enumerate(chosen):
        shift = np.zeros_like(point)
        shift[index] = step
        grad[number] = (loss(point + shift) - loss(point - shift)) / (2.0 * step)
    return grad


def fd_hessian_of(
    grad: Callable[[FloatArray], FloatArray],
    point: FloatArray,
    *,
    step: float = FD_HESSIAN_STEP,
) -> FloatArray:
    """Central differences of an analytic gradient, symmetrized."""
    point = np.asarray(point, dtype=np.float64)
    size = point.shape[0]
    hessian = np.zeros((size, size))
    for index in range(size):
        shift = np.zeros(size)
        shift[index] = step
        hessian[:, index] = (grad(point + shift) - grad(point - shift)) / (2.0 * step)
    return (hessian + hessian.T) / 2.0


def fd_hessian(
    model: MlpModel,
    dataset: Dataset,
    *,
    step: float = FD_HESSIAN_STEP,
) -> FloatArray:
    """Finite-difference Hessian of the mean loss of a tiny model.

    Raises
    ------
        WoodPruneConfigError: The model has more than 200 parameters.

    """
    if model.space.size > MAX_FD_SIZE:
        msg = (
            f"finite-difference Hessian of {model.space.size} parameters "
            f"exceeds the limit of {MAX_FD_SIZE}"
        )
        raise WoodPruneConfigError(msg)
    return fd_hessian_of(
        lambda values: batch_loss_and_grad(
            model.with_values(values), dataset.inputs, dataset.labels
        )[1],
        model.values,
        step=step,
    )


def compare_matrices(
    hessian: FloatArray,
    fisher: FloatArray,
    top_k: int,
    *,
    examples: int = 0,
) -> CurvatureComparison:
    """Measure how well a Fisher matrix stands in for a Hessian.

    The relative difference is ||H - F|| / ||H|| in the Frobenius norm. The
    top overlap is ||U_H^T U_F||^2 / k for the eigenvectors of the k largest
    eigenvalues of each matrix: 1 when both span the same subspace and 0
    when the subspaces are orthogonal.

    Raises
    ------
        WoodPruneStructuralError: The matrices differ in shape.
        WoodPruneConfigError: `top_k` is not in [1, size].
        WoodPruneNumericError: The Hessian is zero.

    """
    hessian, fisher = _square(hessian, "Hessian"), _square(fisher, "Fisher")
    if hessian.shape != fisher.shape:
        msg = f"Hessian {hessian.shape} and Fisher {fisher.shape} differ in shape"
        raise WoodPruneStructuralError(msg)
    size = hessian.shape[0]
    if not 1 <= top_k <= size:
        msg = f"top_k must lie in [1, {size}], got {top_k}"
        raise WoodPruneConfigError(msg)
    norm = np.sqrt(np.sum(hessian * hessian))
    if norm == 0:
        msg = "cannot compare against a zero Hessian"
        raise WoodPruneNumericError(msg)
    hessian_values, hessian_vectors = jacobi_eigh(hessian)
    fisher_values, fisher_vectors = jacobi_eigh(fisher)
    cosines = hessian_vectors[:, -top_k:].T @ fisher_vectors[:, -top_k:]
    return CurvatureComparison(
        examples=examples,
        parameters=size,
        top_k=top_k,
        relative_difference=float(np.sqrt(np.sum((hessian - fisher) ** 2)) / norm),
        top_overlap=float(np.sum(cosines * cosines) / top_k),
        hessian_top=hessian_values[::-1][:top_k].tolist(),
        fisher_top=fisher_values[::-1][:top_k].tolist(),
    )


def compare_curvature(
    model: MlpModel,
    dataset: Dataset,
    top_k: int,
) -> CurvatureComparison:
    """Compare the empirical Fisher of a tiny model with its Hessian.

    The Hessian comes from central differences of the analytic gradient of
    the mean loss; the Fisher is the undampened mean outer product of the
    per-example gradients over the same examples.
    """
    hessian = fd_hessian(model, dataset)
    _, grads = per_example_grads(model, dataset.inputs, dataset.labels)
    fisher = dense_empirical_fisher(
        [GradSample(grad) for grad in grads], 0.0, size=model.space.size
    )
    LOGGER.debug(
        "Comparing curvature of %d parameters over %d examples",
        model.space.size,
        len(dataset),
    )
    return compare_matrices(hessian, fisher, top_k, examples=len(dataset))

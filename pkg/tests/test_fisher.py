"""Second-order network pruning with WoodFisher inverse estimates."""

from itertools import combinations

import numpy as np
import pytest

from woodprune import (
    ChunkedFisherInverse,
    FisherConfig,
    GradSample,
    LabelMode,
    LayerLayout,
    MlpModel,
    RngStream,
    WoodPruneDataError,
    WoodPruneNumericError,
    WoodPruneStructuralError,
    collect_grad_samples,
    diagonal_fisher,
    hutchinson_diagonal,
    ihvp,
    rng_for,
    synth_gaussian_classes,
    woodfisher_build,
)
from woodprune.fisher import chunk_ranges, fisher_matvec, inverse_diagonal
from woodprune.model import per_example_grads
from woodprune.oracle import dense_empirical_fisher, dense_inverse, jacobi_eigenvalues


def _samples(count: int, size: int, seed: int) -> list[GradSample]:
    rng = np.random.default_rng(seed)
    return [GradSample(grad) for grad in rng.standard_normal((count, size))]


def test_single_update() -> None:
    """Test one Sherman-Morrison step on a two-dimensional block."""
    layout = LayerLayout.from_layers([("fc1", 1, 2)], bias=False)
    cfg = FisherConfig(damp=1.0, chunk_size=2)
    inverse = woodfisher_build([GradSample(np.array([1.0, 0.0]))], layout, cfg)
    assert len(inverse.chunks) == 1
    np.testing.assert_allclose(
        inverse.chunks[0].inverse, np.diag([0.5, 1.0]), atol=1e-15
    )
    assert inverse_diagonal(inverse).tolist() == pytest.approx([0.5, 1.0])


@pytest.mark.parametrize("seed", range(50))
def test_woodbury_matches_dense_inverse(seed: int) -> None:
    """Test a full-width block equals the dense inverse."""
    rng = np.random.default_rng(seed)
    size, count = int(rng.integers(1, 65)), int(rng.integers(1, 129))
    damp = 1e-5 if seed % 2 else 1e-1
    layout = LayerLayout.from_layers([("fc1", 1, size)], bias=False)
    samples = _samples(count, size, seed=seed + 100)
    inverse = woodfisher_build(
        samples, layout, FisherConfig(damp=damp, chunk_size=size)
    )
    expected = dense_inverse(dense_empirical_fisher(samples, damp))
    scale = max(1.0, np.abs(expected).max())
    assert np.abs(inverse.chunks[0].inverse - expected).max() <= 1e-8 * scale


def test_sample_order_does_not_matter() -> None:
    """Test reversing the gradient samples leaves every block unchanged."""
    data = synth_gaussian_classes(3, 100, 4, 3.0, seed=0)
    model = MlpModel.initialize((4, 6, 3), seed=0)
    cfg = FisherConfig(
        subsample_size=128, minibatch_size=2, damp=1e-3, chunk_size=16
    )
    samples = collect_grad_samples(
        model, data, cfg, rng_for(0, RngStream.FISHER_SAMPLING)
    )
    forward = woodfisher_build(samples, model.layout, cfg)
    backward = woodfisher_build(samples[::-1], model.layout, cfg)
    for first, second in zip(forward.chunks, backward.chunks, strict=True):
        scale = max(1.0, np.abs(first.inverse).max())
        assert np.abs(first.inverse - second.inverse).max() <= 1e-9 * scale


def test_chunks_match_dense_sub_blocks() -> None:
    """Test every chunk inverts its own diagonal block of the Fisher."""
    layout = LayerLayout.from_layers([("fc1", 4, 8)], bias=False)
    samples = _samples(64, 32, seed=3)
    inverse = woodfisher_build(samples, layout, FisherConfig(damp=0.1, chunk_size=8))
    fisher = dense_empirical_fisher(samples, 0.1)
    assert [(chunk.start, chunk.stop) for chunk in inverse.chunks] == [
        (0, 8),
        (8, 16),
        (16, 24),
        (24, 32),
    ]
    for chunk in inverse.chunks:
        block = fisher[chunk.start : chunk.stop, chunk.start : chunk.stop]
        np.testing.assert_allclose(chunk.inverse, dense_inverse(block), atol=1e-8)
        assert np.abs(chunk.inverse - chunk.inverse.T).max() <= 1e-10
        assert jacobi_eigenvalues((chunk.inverse + chunk.inverse.T) / 2)[0] > 0


def test_chunk_ranges_follow_segments() -> None:
    """Test chunks partition every segment without crossing boundaries."""
    layout = LayerLayout.for_mlp((3, 2, 2))
    assert chunk_ranges(layout, 4) == [
        ("fc1.weight", 0, 4),
        ("fc1.weight", 4, 6),
        ("fc1.bias", 6, 8),
        ("fc2.weight", 8, 12),
        ("fc2.bias", 12, 14),
    ]
    assert chunk_ranges(layout, 4, {"fc2.weight"}) == [("fc2.weight", 8, 12)]


def test_ihvp() -> None:
    """Test the block product against the dense inverse."""
    layout = LayerLayout.from_layers([("fc1", 1, 12)], bias=False)
    samples = _samples(20, 12, seed=5)
    inverse = woodfisher_build(samples, layout, FisherConfig(damp=0.5, chunk_size=12))
    vector = np.random.default_rng(6).standard_normal(12)
    expected = dense_inverse(dense_empirical_fisher(samples, 0.5)) @ vector
    np.testing.assert_allclose(ihvp(inverse, vector), expected, atol=1e-8)
    assert not ihvp(inverse, np.zeros(12)).any()


def test_ihvp_without_samples() -> None:
    """Test blocks without samples scale by the inverse dampening."""
    layout = LayerLayout.for_mlp((3, 2))
    inverse = woodfisher_build([], layout, FisherConfig(damp=0.25, chunk_size=3))
    vector = np.arange(8.0)
    np.testing.assert_allclose(ihvp(inverse, vector), vector / 0.25)
    assert inverse_diagonal(inverse).tolist() == [4.0] * 8


def test_ihvp_outside_chunks() -> None:
    """Test coordinates outside every chunk fall back to 1 / damp."""
    layout = LayerLayout.for_mlp((3, 2, 2))
    samples = _samples(5, layout.size, seed=7)
    inverse = woodfisher_build(
        samples, layout, FisherConfig(damp=0.5, chunk_size=4), layers={"fc2.weight"}
    )
    vector = np.random.default_rng(8).standard_normal(layout.size)
    result = ihvp(inverse, vector)
    np.testing.assert_allclose(result[:8], vector[:8] / 0.5)
    np.testing.assert_allclose(result[12:], vector[12:] / 0.5)
    assert inverse.owner.tolist() == [-1] * 8 + [0] * 4 + [-1] * 2


def test_ihvp_rejects_wrong_length() -> None:
    """Test vectors must have d entries."""
    inverse = ChunkedFisherInverse.from_dense(np.eye(3))
    with pytest.raises(WoodPruneStructuralError):
        ihvp(inverse, np.ones(4))


def test_threads_do_not_change_result() -> None:
    """Test concurrent chunk builds give bit-identical blocks."""
    layout = LayerLayout.for_mlp((6, 5, 3))
    samples = _samples(16, layout.size, seed=9)
    cfg = FisherConfig(damp=1e-3, chunk_size=4)
    single = woodfisher_build(samples, layout, cfg, threads=1)
    pooled = woodfisher_build(samples, layout, cfg, threads=4)
    assert len(single.chunks) == len(pooled.chunks)
    for first, second in zip(single.chunks, pooled.chunks, strict=True):
        assert (first.layer, first.start, first.stop) == (
            second.layer,
            second.start,
            second.stop,
        )
        assert np.array_equal(first.inverse, second.inverse)


def test_non_finite_sample_rejected() -> None:
    """Test gradient samples must be finite."""
    with pytest.raises(WoodPruneNumericError):
        GradSample(np.array([1.0, np.inf]))


def test_fisher_matvec() -> None:
    """Test the Fisher product against the dense Fisher."""
    layout = LayerLayout.from_layers([("fc1", 1, 6)], bias=False)
    samples = _samples(4, 6, seed=10)
    inverse = woodfisher_build(samples, layout, FisherConfig(damp=0.3, chunk_size=2))
    vector = np.random.default_rng(11).standard_normal(6)
    np.testing.assert_allclose(
        fisher_matvec(inverse, vector),
        dense_empirical_fisher(samples, 0.3) @ vector,
        atol=1e-12,
    )


def test_diagonal_fisher() -> None:
    """Test the diagonal Fisher is damp plus the mean squared gradient."""
    single = diagonal_fisher([GradSample(np.array([1.0, 2.0]))], 0.01)
    np.testing.assert_allclose(single.diag, [1.01, 4.01])
    zero = diagonal_fisher([GradSample(np.zeros(3))], 0.5)
    assert zero.diag.tolist() == [0.5, 0.5, 0.5]
    pair = diagonal_fisher(
        [GradSample(np.array([1.0, 0.0])), GradSample(np.array([0.0, 1.0]))], 0.0
    )
    assert pair.diag.tolist() == [0.5, 0.5]


def test_collect_minibatch_means() -> None:
    """Test every sample is the mean of three distinct example gradients."""
    data = synth_gaussian_classes(3, 2, 4, 2.0, seed=1)
    model = MlpModel.initialize((4, 5, 3), seed=1)
    cfg = FisherConfig(subsample_size=2, minibatch_size=3)
    samples = collect_grad_samples(model, data, cfg, np.random.default_rng(0))
    _, grads = per_example_grads(model, data.inputs, data.labels)
    assert len(samples) == 2
    assert all(sample.weight == 3 for sample in samples)
    means = [grads[list(triple)].mean(axis=0) for triple in combinations(range(6), 3)]
    for sample in samples:
        assert min(np.abs(mean - sample.grad).max() for mean in means) < 1e-12
    np.testing.assert_allclose(
        3 * (samples[0].grad + samples[1].grad), grads.sum(axis=0), atol=1e-12
    )


def test_collect_single_example_samples() -> None:
    """Test mini-batches of one give raw per-example gradients."""
    data = synth_gaussian_classes(3, 4, 4, 2.0, seed=1)
    model = MlpModel.initialize((4, 5, 3), seed=1)
    cfg = FisherConfig(subsample_size=len(data), minibatch_size=1)
    samples = collect_grad_samples(model, data, cfg, np.random.default_rng(0))
    _, grads = per_example_grads(model, data.inputs, data.labels)
    np.testing.assert_allclose(
        np.mean([sample.grad for sample in samples], axis=0),
        grads.mean(axis=0),
        atol=1e-12,
    )


def test_collect_is_deterministic() -> None:
    """Test a fixed stream gives an identical sample set."""
    data = synth_gaussian_classes(3, 10, 4, 2.0, seed=1)
    model = MlpModel.initialize((4, 5, 3), seed=1)
    cfg = FisherConfig(subsample_size=5, minibatch_size=4, label_mode=LabelMode.SAMPLED)

    def draw() -> list[GradSample]:
        return collect_grad_samples(
            model,
            data,
            cfg,
            rng_for(3, RngStream.FISHER_SAMPLING, 0),
            label_rng=rng_for(3, RngStream.LABEL_SAMPLING, 0),
        )

    for first, second in zip(draw(), draw(), strict=True):
        assert np.array_equal(first.grad, second.grad)


def test_collect_needs_enough_examples() -> None:
    """Test sampling without replacement needs m x minibatch examples."""
    data = synth_gaussian_classes(2, 5, 4, 2.0, seed=1)
    model = MlpModel.initialize((4, 3, 2), seed=1)
    cfg = FisherConfig(subsample_size=4, minibatch_size=3)
    with pytest.raises(WoodPruneDataError, match="needs 12 examples"):
        collect_grad_samples(model, data, cfg, np.random.default_rng(0))


def test_hutchinson_diagonal() -> None:
    """Test the Hessian diagonal estimate is reproducible and sized d."""
    data = synth_gaussian_classes(3, 10, 4, 2.0, seed=1)
    model = MlpModel.initialize((4, 5, 3), seed=1)
    cfg = FisherConfig(subsample_size=6, minibatch_size=5)
    first = hutchinson_diagonal(model, data, cfg, rng_for(0, RngStream.HUTCHINSON, 0))
    second = hutchinson_diagonal(model, data, cfg, rng_for(0, RngStream.HUTCHINSON, 0))
    assert first.shape == (model.space.size,)
    assert np.array_equal(first, second)
    with pytest.raises(WoodPruneDataError):
        hutchinson_diagonal(
            model,
            data,
            FisherConfig(subsample_size=7, minibatch_size=5),
            rng_for(0, RngStream.HUTCHINSON, 1),
        )

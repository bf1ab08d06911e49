"""Second-order network pruning with WoodFisher inverse estimates."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from woodprune import ChunkedFisherInverse, LayerLayout, ParamSpace
from woodprune.oracle import dense_inverse

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(filename: str) -> str:
    """Load a fixture."""
    return (FIXTURES / filename).read_text()


def fixture_path(filename: str) -> Path:
    """Return the path of a fixture."""
    return FIXTURES / filename


def random_spd(size: int, seed: int) -> np.ndarray:
    """Return a well-conditioned random symmetric positive definite matrix."""
    rng = np.random.default_rng(seed)
    factor = rng.standard_normal((size, size))
    matrix = factor @ factor.T + size * np.eye(size)
    return (matrix + matrix.T) / 2.0


def flat_space(weights: list[float] | np.ndarray) -> ParamSpace:
    """Wrap a weight vector as one bias-free dense layer."""
    weights = np.asarray(weights, dtype=np.float64)
    layout = LayerLayout.from_layers([("fc1", 1, weights.shape[0])], bias=False)
    return ParamSpace(weights, layout)


def inverse_of(hessian: np.ndarray) -> ChunkedFisherInverse:
    """Wrap the dense inverse of a Hessian as a single-chunk inverse."""
    return ChunkedFisherInverse.from_dense(dense_inverse(hessian))


def write_idx(path: Path, array: np.ndarray) -> None:
    """Write an unsigned byte array in IDX format."""
    magic = 0x00000800 | array.ndim
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    path.write_bytes(header + array.astype(np.uint8).tobytes())


def write_mnist(
    directory: Path,
    *,
    train: int = 48,
    test: int = 20,
    side: int = 4,
    seed: int = 0,
) -> Path:
    """Write a tiny learnable MNIST lookalike under the standard file names.

    The image of class c has its c-th pixel lit on top of faint noise.
    """
    rng = np.random.default_rng(seed)
    for count, images, labels in (
        (train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        (test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ):
        classes = np.arange(count) % 10
        pixels = rng.integers(0, 40, size=(count, side * side))
        pixels[np.arange(count), classes] = 255
        write_idx(directory / images, pixels.reshape(count, side, side))
        write_idx(directory / labels, classes)
    return directory

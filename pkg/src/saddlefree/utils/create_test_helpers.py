from typing import Callable

import numpy as np

from saddlefree.core.oracles import Vector

MatVec = Callable[[Vector], Vector]


def random_spd(dim: int, rng: np.random.Generator, shift: float = 0.5) -> Vector:
    """
    Creates a random symmetric positive-definite matrix.

    :param dim: Matrix size.
    :param rng: Source of randomness.
    :param shift: Multiple of the identity added to MᵀM/dim.
    :return: A dim × dim SPD matrix.
    """
    factor = rng.standard_normal((dim, dim))
    return factor.T @ factor / dim + shift * np.eye(dim)


def random_symmetric(dim: int, rng: np.random.Generator) -> Vector:
    """Random symmetric (generally indefinite) matrix."""
    m = rng.standard_normal((dim, dim))
    return (m + m.T) / 2.0


def dense_operator(matrix: Vector) -> MatVec:
    """Wraps a dense matrix as a v ↦ Mv callable."""
    return lambda v: matrix @ v


def densify(op: MatVec, dim: int) -> Vector:
    """Columns Me₁, …, Meₙ of a linear operator; for small test dimensions only."""
    return np.column_stack([op(e) for e in np.eye(dim)])


def central_difference(
    fn: Callable[[Vector], float], x: Vector, step: float = 1e-6
) -> Vector:
    """Central finite-difference gradient of a scalar function."""
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return grad


def directional_difference(
    fn: Callable[[Vector], Vector], x: Vector, v: Vector, step: float = 1e-6
) -> Vector:
    """(F(x + hv) − F(x − hv))/(2h) for a vector-valued F."""
    return (fn(x + step * v) - fn(x - step * v)) / (2.0 * step)


def scaled_error(actual: Vector, expected: Vector) -> float:
    """
    ‖actual − expected‖ / max(1, ‖expected‖).

    Absolute below unit scale and relative above it, so near-zero references
    such as a vanishing gradient do not blow the ratio up.
    """
    scale = max(1.0, float(np.linalg.norm(expected)))
    return float(np.linalg.norm(np.asarray(actual) - np.asarray(expected))) / scale

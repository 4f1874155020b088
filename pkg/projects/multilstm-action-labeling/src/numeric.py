"""Dense numeric helpers shared by every model.

All arrays are float64. Randomness comes from ``numpy.random.Generator`` backed by
PCG64; a run seed is expanded into independent substreams with
``numpy.random.SeedSequence.spawn`` so the same seed always yields the same streams.
"""

import logging
from typing import Callable, List

import numpy as np
from numpy.typing import NDArray

from src.errors import ArgumentError, GradientCheckError, ShapeError

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]


def as_matrix(values) -> Matrix:
    """Return ``values`` as a float64 array (copying only when needed)."""
    return np.asarray(values, dtype=np.float64)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check.

    Raises:
        ShapeError: If ``a.cols != b.rows``; the message names both shapes.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: Matrix) -> Matrix:
    """Elementwise logistic function that never overflows."""
    x = as_matrix(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x: Matrix) -> Matrix:
    return np.tanh(as_matrix(x))


def softplus(x: Matrix) -> Matrix:
    """``log(1 + exp(x))`` via the max trick."""
    x = as_matrix(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softmax(logits: Vector) -> Vector:
    """Normalised exponential of a 1-D vector.

    Raises:
        ArgumentError: If ``logits`` is empty.
    """
    logits = as_matrix(logits)
    if logits.size == 0:
        raise ArgumentError("softmax of an empty vector")
    shifted = np.exp(logits - np.max(logits))
    return shifted / np.sum(shifted)


def finite_diff_gradient(
    f: Callable[[Vector], float], theta: Vector, eps: float = 1e-5
) -> Vector:
    """Central-difference gradient of a scalar function.

    Args:
        f: Scalar function of a flat parameter vector.
        theta: Point at which to differentiate; left unchanged.
        eps: Step size, must be positive.

    Returns:
        ``(f(theta + eps*e_i) - f(theta - eps*e_i)) / (2*eps)`` for every coordinate.

    Raises:
        ArgumentError: If ``eps`` is not positive.
        GradientCheckError: If ``f`` is not finite at a probed point.
    """
    if eps <= 0:
        raise ArgumentError(f"finite-difference step must be positive, got {eps}")
    theta = np.array(theta, dtype=np.float64).reshape(-1)
    grad = np.zeros_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + eps
        upper = float(f(probe))
        probe[i] = theta[i] - eps
        lower = float(f(probe))
        probe[i] = theta[i]
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise GradientCheckError(f"non-finite function value at coordinate {i}")
        grad[i] = (upper - lower) / (2.0 * eps)
    return grad


def relative_error(analytic: Vector, numeric: Vector) -> Vector:
    """Per-coordinate ``|a - n| / max(1, |a|, |n|)``."""
    analytic = as_matrix(analytic)
    numeric = as_matrix(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """``count`` independent, deterministic generators derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Matrix:
    """Uniform weights in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    scale = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-scale, scale, size=shape)

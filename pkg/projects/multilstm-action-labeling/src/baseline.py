"""Single-frame multilabel logistic regression, the context-free baseline."""

from dataclasses import dataclass

import numpy as np

from src.errors import ShapeError
from src.numeric import Matrix, Vector, as_matrix, uniform_init
from src.params import ParameterGroup


@dataclass
class FrameParams(ParameterGroup):
    w: Matrix
    b: Vector


def init_frame_params(
    rng: np.random.Generator, input_dim: int, num_classes: int
) -> FrameParams:
    return FrameParams(
        w=uniform_init(rng, (num_classes, input_dim), input_dim),
        b=np.zeros(num_classes),
    )


def frame_forward(params: FrameParams, features: Matrix) -> Matrix:
    """Per-frame class scores ``W x_t + b``."""
    features = as_matrix(features)
    if features.ndim != 2 or features.shape[1] != params.w.shape[1]:
        raise ShapeError(
            f"features of shape {features.shape}, expected (T, {params.w.shape[1]})"
        )
    return np.stack([params.w @ x + params.b for x in features])


def frame_backward(
    params: FrameParams, features: Matrix, d_scores: Matrix
) -> FrameParams:
    features = as_matrix(features)
    d_scores = as_matrix(d_scores)
    if d_scores.shape != (features.shape[0], params.w.shape[0]):
        raise ShapeError(
            f"d_scores of shape {d_scores.shape} for {features.shape[0]} frames"
        )
    return FrameParams(w=d_scores.T @ features, b=d_scores.sum(axis=0))

"""RMSProp training with stateful minibatch streaming.

Each video is cut into consecutive minibatches of ``minibatch`` frames. The forward
pass is exact across minibatch boundaries (the model carry is handed on), while
backpropagation stops at the start of each minibatch: the gradient with respect to the
incoming carry is dropped. The carry is reset at every video boundary.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.checkpoint import Checkpoint
from src.config import TrainConfig
from src.data import Dataset
from src.errors import ArgumentError, ConfigurationError, DivergenceError
from src.models import ChunkOutput, SequenceModel
from src.multilstm import multilabel_loss, shift_labels
from src.numeric import Matrix, spawn_rngs
from src.params import ParameterGroup

logger = logging.getLogger(__name__)


@dataclass
class RmsPropState:
    """Squared-gradient cache plus the optimiser constants."""

    cache: ParameterGroup
    decay: float = 0.95
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def for_params(
        cls, params: ParameterGroup, config: Optional[TrainConfig] = None
    ) -> "RmsPropState":
        config = config or TrainConfig()
        return cls(
            cache=params.zeros_like(),
            decay=config.decay,
            epsilon=config.epsilon,
            learning_rate=config.learning_rate,
        )


def rmsprop_update(
    params: ParameterGroup, grads: ParameterGroup, state: RmsPropState
) -> Tuple[ParameterGroup, RmsPropState]:
    """One RMSProp step, applied in place; returns ``(params, state)`` for chaining.

    ``cache <- decay * cache + (1 - decay) * g**2`` and
    ``theta <- theta - lr * g / (sqrt(cache) + eps)``. Coordinates whose denominator is
    zero (``eps = 0`` and no gradient history) are left unchanged.

    Raises:
        ShapeError: If ``grads`` or the cache do not mirror ``params``.
    """
    params.require_same_shapes(grads, "gradient")
    params.require_same_shapes(state.cache, "optimizer cache")
    theta = params.named_arrays().values()
    grad = grads.named_arrays().values()
    cache = state.cache.named_arrays().values()
    for p, g, c in zip(theta, grad, cache):
        c *= state.decay
        c += (1.0 - state.decay) * g * g
        denom = np.sqrt(c) + state.epsilon
        step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
        p -= state.learning_rate * step
    return params, state


def clip_by_global_norm(grads: ParameterGroup, threshold: float) -> float:
    """Rescale ``grads`` in place so their global norm is at most ``threshold``.

    Returns:
        The norm before clipping.
    """
    norm = grads.global_norm()
    if norm > threshold:
        grads.scale_(threshold / norm)
    return norm


def head_targets(
    shifted: np.ndarray, mask: np.ndarray, start: int, length: int, n_outputs: int
) -> Tuple[Matrix, np.ndarray]:
    """Targets for the heads of steps ``start .. start + length - 1``.

    Head ``k`` of step ``i`` predicts frame ``i - k``; its target is ``shifted[i - k]``
    and it is kept only when ``i - k >= 0`` and ``mask[i - k]`` holds.

    Returns:
        ``(targets, keep)`` of shapes ``L×N×C`` and ``L×N``.
    """
    n_classes = shifted.shape[1]
    targets = np.zeros((length, n_outputs, n_classes))
    keep = np.zeros((length, n_outputs), dtype=bool)
    for j in range(length):
        for k in range(n_outputs):
            frame = start + j - k
            if frame < 0:
                break
            targets[j, k] = shifted[frame]
            keep[j, k] = mask[frame]
    return targets, keep


def _check_dimensions(model: SequenceModel, dataset: Dataset) -> None:
    if not dataset.videos:
        raise ArgumentError("cannot train on an empty dataset")
    config = model.config
    if (
        dataset.feature_dim != config.input_dim
        or dataset.num_classes != config.num_classes
    ):
        raise ConfigurationError(
            f"model expects D={config.input_dim}, C={config.num_classes}; dataset has "
            f"D={dataset.feature_dim}, C={dataset.num_classes}"
        )


def _chunk_loss(
    model: SequenceModel, head_scores: Matrix, shifted, mask, start: int
) -> Tuple[float, int, Matrix]:
    length = head_scores.shape[0]
    targets, keep = head_targets(shifted, mask, start, length, model.n_outputs)
    flat_shape = (length * model.n_outputs, head_scores.shape[2])
    loss, grad = multilabel_loss(
        head_scores.reshape(flat_shape), targets.reshape(flat_shape), keep.reshape(-1)
    )
    return loss, int(keep.sum()), grad.reshape(head_scores.shape)


def stream_chunks(
    model: SequenceModel, params: ParameterGroup, features: Matrix, chunk_length: int
) -> Iterator[Tuple[int, ChunkOutput]]:
    """Yield ``(start, output)`` for consecutive chunks of one video.

    The carry starts empty and is handed from chunk to chunk. Chunks are computed
    lazily, so parameters updated between two chunks take effect on the next one.
    """
    carry = model.initial_carry()
    for start in range(0, features.shape[0], chunk_length):
        out = model.forward_chunk(params, features[start : start + chunk_length], carry)
        carry = out.carry
        yield start, out


def evaluate_loss(
    model: SequenceModel,
    params: ParameterGroup,
    features: Sequence[Matrix],
    labels: Sequence[np.ndarray],
    chunk_length: int = 32,
) -> float:
    """Mean multilabel loss per kept (frame, head) pair, without updating anything."""
    total, count = 0.0, 0
    for video_features, video_labels in zip(features, labels):
        shifted, mask = shift_labels(video_labels, model.config.offset)
        for start, out in stream_chunks(model, params, video_features, chunk_length):
            loss, kept, _ = _chunk_loss(model, out.head_scores, shifted, mask, start)
            total += loss
            count += kept
    return total / count if count else 0.0


def initial_params(model: SequenceModel, seed: int) -> ParameterGroup:
    """The parameters ``train`` starts from for ``seed``."""
    init_rng, _ = spawn_rngs(seed, 2)
    return model.init_params(init_rng)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: pd.DataFrame


def train(
    model: SequenceModel,
    dataset: Dataset,
    config: TrainConfig,
    params: Optional[ParameterGroup] = None,
) -> TrainResult:
    """Train ``model`` on ``dataset``.

    Args:
        model: Architecture to train (its config carries the label offset).
        dataset: Videos with features and intervals.
        config: Optimiser and streaming settings.
        params: Starting parameters; defaults to :func:`initial_params`.

    Returns:
        The final checkpoint and a loss table with one row per epoch. Row ``0`` is the
        loss of the starting parameters; later rows are the mean minibatch loss seen
        while training that epoch.

    Raises:
        ConfigurationError: If model and dataset dimensions disagree.
        DivergenceError: If a minibatch loss is not finite.
    """
    _check_dimensions(model, dataset)
    features = dataset.features()
    labels = dataset.label_matrices()
    targets = [shift_labels(z, model.config.offset) for z in labels]
    _, order_rng = spawn_rngs(config.seed, 2)
    if params is None:
        params = initial_params(model, config.seed)
    else:
        params = params.copy()
    optimizer = RmsPropState.for_params(params, config)

    initial = evaluate_loss(model, params, features, labels, config.minibatch)
    rows: List[dict] = [{"epoch": 0, "mean_loss": initial}]
    logger.info("Initial loss %.6f over %d videos", initial, len(features))

    step = 0
    for epoch in range(1, config.epochs + 1):
        if config.shuffle:
            order = order_rng.permutation(len(features))
        else:
            order = np.arange(len(features))
        total, count = 0.0, 0
        for index in order:
            shifted, mask = targets[index]
            chunks = stream_chunks(model, params, features[index], config.minibatch)
            for start, out in chunks:
                loss, kept, d_scores = _chunk_loss(
                    model, out.head_scores, shifted, mask, start
                )
                step += 1
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, step, loss)
                if kept == 0:
                    continue
                grads = model.backward_chunk(params, out.cache, d_scores / kept)
                clip_by_global_norm(grads, config.clip)
                rmsprop_update(params, grads, optimizer)
                total += loss
                count += kept
        mean_loss = total / count if count else 0.0
        rows.append({"epoch": epoch, "mean_loss": mean_loss})
        logger.info("Epoch %d/%d mean loss %.6f", epoch, config.epochs, mean_loss)

    checkpoint = Checkpoint(
        model_config=model.config,
        train_config=config,
        params=params,
        optimizer_cache=optimizer.cache,
        epoch=config.epochs,
        seed=config.seed,
    )
    return TrainResult(checkpoint=checkpoint, losses=pd.DataFrame(rows))

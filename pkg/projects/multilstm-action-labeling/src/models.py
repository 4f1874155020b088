"""One streaming interface over the three architectures.

Every model consumes a video chunk by chunk. ``forward_chunk`` returns per-step
head scores of shape ``L×N×C`` (``N = 1`` for the frame and LSTM models) and a
carry for the next chunk; ``backward_chunk`` maps head-score gradients onto
parameter gradients and discards the gradient w.r.t. the incoming carry.
"""

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import Any, List, NamedTuple, Sequence

import numpy as np

from src.baseline import FrameParams, frame_backward, frame_forward, init_frame_params
from src.config import ModelConfig
from src.errors import ConfigurationError, ShapeError
from src.lstm import LstmState, init_lstm_params, lstm_backward, lstm_forward
from src.multilstm import (
    MultiLstmCarry,
    consolidate_outputs,
    init_multilstm_params,
    multilstm_backward,
    multilstm_forward,
)
from src.numeric import Matrix, sigmoid
from src.params import ParameterGroup

logger = logging.getLogger(__name__)


class ChunkOutput(NamedTuple):
    head_scores: Matrix
    carry: Any
    cache: Any


class SequenceModel(ABC):
    def __init__(self, config: ModelConfig):
        self.config = config

    @property
    def n_outputs(self) -> int:
        return self.config.n_outputs

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> ParameterGroup:
        ...

    @abstractmethod
    def initial_carry(self) -> Any:
        ...

    @abstractmethod
    def forward_chunk(
        self, params: ParameterGroup, features: Matrix, carry: Any
    ) -> ChunkOutput:
        ...

    @abstractmethod
    def backward_chunk(
        self, params: ParameterGroup, cache: Any, d_head_scores: Matrix
    ) -> ParameterGroup:
        ...

    def template(self) -> ParameterGroup:
        """Parameters with the right shapes, for loading checkpoints into."""
        return self.init_params(np.random.default_rng(0))


class FrameModel(SequenceModel):
    def init_params(self, rng):
        return init_frame_params(rng, self.config.input_dim, self.config.num_classes)

    def initial_carry(self):
        return None

    def forward_chunk(self, params: FrameParams, features, carry):
        scores = frame_forward(params, features)
        return ChunkOutput(scores[:, None, :], None, features)

    def backward_chunk(self, params: FrameParams, cache, d_head_scores):
        return frame_backward(params, cache, d_head_scores[:, 0, :])


class LstmModel(SequenceModel):
    def init_params(self, rng):
        return init_lstm_params(
            rng, self.config.input_dim, self.config.hidden, self.config.num_classes
        )

    def initial_carry(self):
        return LstmState.zeros(self.config.hidden)

    def forward_chunk(self, params, features, carry):
        ys, final, cache = lstm_forward(params, features, carry)
        return ChunkOutput(ys[:, None, :], final, cache)

    def backward_chunk(self, params, cache, d_head_scores):
        grads, _ = lstm_backward(params, cache, d_head_scores[:, 0, :])
        return grads


class MultiLstmModel(SequenceModel):
    def init_params(self, rng):
        return init_multilstm_params(
            rng, self.config.input_dim, self.config.num_classes, self.config
        )

    def initial_carry(self):
        return MultiLstmCarry.empty(self.config.hidden, self.config.input_dim)

    def forward_chunk(self, params, features, carry):
        result = multilstm_forward(params, features, self.config, carry)
        return ChunkOutput(result.head_scores, result.final, result.cache)

    def backward_chunk(self, params, cache, d_head_scores):
        grads, _ = multilstm_backward(params, cache, d_head_scores)
        return grads


_ARCHITECTURES = {"frame": FrameModel, "lstm": LstmModel, "multilstm": MultiLstmModel}


def build_model(config: ModelConfig) -> SequenceModel:
    try:
        return _ARCHITECTURES[config.architecture](config)
    except KeyError:
        raise ConfigurationError(
            f"unknown architecture {config.architecture!r}"
        ) from None


def predict_head_probs(
    model: SequenceModel,
    params: ParameterGroup,
    features: Matrix,
    chunk_length: int = 32,
) -> Matrix:
    """Stream a whole video through the model; returns ``T×N×C`` probabilities."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.config.input_dim:
        expected = f"(T, {model.config.input_dim})"
        raise ShapeError(f"features of shape {features.shape}, expected {expected}")
    carry = model.initial_carry()
    chunks = []
    for start in range(0, features.shape[0], chunk_length):
        out = model.forward_chunk(params, features[start : start + chunk_length], carry)
        chunks.append(out.head_scores)
        carry = out.carry
    return sigmoid(np.concatenate(chunks, axis=0))


def predict_video(
    model: SequenceModel,
    params: ParameterGroup,
    features: Matrix,
    chunk_length: int = 32,
) -> Matrix:
    """Consolidated ``T×C`` predictions for one video (state reset at its start)."""
    head_probs = predict_head_probs(model, params, features, chunk_length)
    return consolidate_outputs(head_probs)


def predict_dataset(
    model: SequenceModel,
    params: ParameterGroup,
    features: Sequence[Matrix],
    chunk_length: int = 32,
    workers: int = 1,
) -> List[Matrix]:
    """Predictions for many videos; results keep the input order."""
    if workers <= 1:
        return [predict_video(model, params, f, chunk_length) for f in features]
    logger.info("Predicting %d videos with %d workers", len(features), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(
            pool.map(lambda f: predict_video(model, params, f, chunk_length), features)
        )

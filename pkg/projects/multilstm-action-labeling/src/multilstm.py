"""LSTM with an attended input window, multiple output heads and label offsets.

At step ``i`` the model attends over the current frame and up to ``W - 1`` preceding
frames::

    a_h = tanh(W_ha h_{i-1})
    a_v[t] = tanh(W_va v_t)
    alpha = softmax_t(w_ae . (a_h * a_v[t]))
    x_i = sum_t alpha[t] v_t

feeds ``x_i`` to the LSTM cell, and emits ``N`` score vectors from ``h_i``: head ``k``
(``W_hy`` for ``k = 0``, ``lag_w[k-1]`` otherwise) predicts frame ``i - k``. Per-frame
probabilities are the plain mean of every sigmoid prediction a frame received.

With ``offset = s`` the label targets are shifted, so row ``t`` of the predictions is a
prediction for label frame ``t + s``.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ArgumentError, InternalConsistencyError, ShapeError
from src.lstm import (
    LstmParams,
    LstmState,
    StepCache,
    cell_backward,
    cell_forward,
    gate_gradients,
    init_lstm_params,
    stack_weights,
)
from src.numeric import (
    Matrix,
    Vector,
    as_matrix,
    sigmoid,
    softmax,
    softplus,
    uniform_init,
)
from src.params import ParameterGroup

logger = logging.getLogger(__name__)


class MultiLstmConfig(BaseModel):
    """Architecture hyperparameters; defaults are the published settings."""

    model_config = ConfigDict(extra="forbid")

    window: int = Field(15, ge=1, description="input window W (frames, incl. current)")
    output_window: Optional[int] = Field(
        None, ge=1, description="output window N; defaults to W"
    )
    hidden: int = Field(512, ge=1)
    attention_units: int = Field(50, ge=1)
    offset: int = Field(0, description="label offset s in frames")
    frame_rate: float = Field(10.0, gt=0)
    attention: bool = Field(True, description="False averages the window uniformly")

    @model_validator(mode="after")
    def _resolve_output_window(self) -> "MultiLstmConfig":
        if self.output_window is None:
            self.output_window = self.window
        return self

    @property
    def n_outputs(self) -> int:
        return int(self.output_window or self.window)


@dataclass
class AttentionParams(ParameterGroup):
    w_ae: Vector
    w_ha: Matrix
    w_va: Matrix

    @property
    def units(self) -> int:
        return int(self.w_ae.shape[0])


@dataclass
class MultiLstmParams(ParameterGroup):
    """LSTM core, optional attention, and output heads for lags ``1..N-1``.

    ``lstm.w_hy``/``lstm.b_y`` is the head for the current frame.
    """

    lstm: LstmParams
    attention: Optional[AttentionParams] = None
    lag_w: List[Matrix] = field(default_factory=list)
    lag_b: List[Vector] = field(default_factory=list)

    @property
    def n_outputs(self) -> int:
        return 1 + len(self.lag_w)

    @classmethod
    def from_lstm(
        cls, lstm: LstmParams, attention: Optional[AttentionParams] = None
    ) -> "MultiLstmParams":
        return cls(lstm=lstm, attention=attention)


@dataclass
class MultiLstmCarry:
    """State handed from one chunk to the next: LSTM state and trailing frames."""

    state: LstmState
    context: Matrix

    @classmethod
    def empty(cls, hidden_dim: int, input_dim: int) -> "MultiLstmCarry":
        return cls(state=LstmState.zeros(hidden_dim), context=np.zeros((0, input_dim)))


def init_multilstm_params(
    rng: np.random.Generator,
    input_dim: int,
    num_classes: int,
    config: MultiLstmConfig,
) -> MultiLstmParams:
    lstm = init_lstm_params(rng, input_dim, config.hidden, num_classes)
    attention = None
    if config.attention:
        units = config.attention_units
        attention = AttentionParams(
            w_ae=uniform_init(rng, (units,), units),
            w_ha=uniform_init(rng, (units, config.hidden), config.hidden),
            w_va=uniform_init(rng, (units, input_dim), input_dim),
        )
    lag_w = [
        uniform_init(rng, (num_classes, config.hidden), config.hidden)
        for _ in range(config.n_outputs - 1)
    ]
    lag_b = [np.zeros(num_classes) for _ in range(config.n_outputs - 1)]
    return MultiLstmParams(lstm=lstm, attention=attention, lag_w=lag_w, lag_b=lag_b)


def _project_frames(w_va: Matrix, frames: Matrix) -> Matrix:
    # one matrix-vector product per frame so a frame's projection does not depend on
    # how many frames share the call
    return np.stack([np.tanh(w_va @ v) for v in frames])


def _attention_from_projections(w_ae: Vector, a_h: Vector, a_v: Matrix) -> Vector:
    return softmax((a_v * a_h) @ w_ae)


def attention_weights(attn: AttentionParams, h_prev: Vector, window: Matrix) -> Vector:
    """Soft attention over the frames of an input window.

    Raises:
        ArgumentError: If the window is empty.
        ShapeError: If frame width or hidden size disagree with ``attn``.
    """
    window = as_matrix(window)
    if window.ndim != 2 or window.shape[0] == 0:
        raise ArgumentError("attention over an empty window")
    if window.shape[1] != attn.w_va.shape[1]:
        raise ShapeError(
            f"frames of width {window.shape[1]}, expected {attn.w_va.shape[1]}"
        )
    if h_prev.shape != (attn.w_ha.shape[1],):
        raise ShapeError(
            f"hidden vector {h_prev.shape}, expected ({attn.w_ha.shape[1]},)"
        )
    a_h = np.tanh(attn.w_ha @ h_prev)
    a_v = _project_frames(attn.w_va, window)
    return _attention_from_projections(attn.w_ae, a_h, a_v)


def attended_input(alpha: Vector, window: Matrix) -> Vector:
    """Convex combination ``sum_t alpha[t] * window[t]``."""
    alpha = as_matrix(alpha)
    window = as_matrix(window)
    if window.ndim != 2 or alpha.shape != (window.shape[0],):
        raise ShapeError(
            f"{alpha.shape[0]} weights for a window of shape {window.shape}"
        )
    return alpha @ window


def consolidate_outputs(head_probs: Matrix) -> Matrix:
    """Average per-step head predictions into per-frame probabilities.

    Args:
        head_probs: ``T×N×C``; ``head_probs[i, k]`` is step ``i``'s prediction for
            frame ``i - k``.

    Returns:
        ``T×C`` FramePredictions; frame ``t`` averages the ``min(N, T - t)`` steps
        that predicted it.
    """
    head_probs = as_matrix(head_probs)
    steps, n_out, _ = head_probs.shape
    sums = np.zeros((steps, head_probs.shape[2]))
    counts = np.zeros(steps)
    for k in range(min(n_out, steps)):
        sums[: steps - k] += head_probs[k:, k]
        counts[: steps - k] += 1.0
    return sums / counts[:, None]


def consolidation_backward(d_predictions: Matrix, head_probs: Matrix) -> Matrix:
    """Map ``dL/dFramePredictions`` onto ``dL/dhead_scores`` (through the sigmoid)."""
    d_predictions = as_matrix(d_predictions)
    steps, n_out, classes = head_probs.shape
    if d_predictions.shape != (steps, classes):
        raise ShapeError(
            f"gradient of shape {d_predictions.shape}, expected {(steps, classes)}"
        )
    counts = np.zeros(steps)
    for k in range(min(n_out, steps)):
        counts[: steps - k] += 1.0
    per_frame = d_predictions / counts[:, None]
    d_probs = np.zeros_like(head_probs)
    for k in range(min(n_out, steps)):
        d_probs[k:, k] = per_frame[: steps - k]
    return d_probs * head_probs * (1.0 - head_probs)


@dataclass
class AttentionStep:
    window: Matrix
    alpha: Vector
    a_h: Optional[Vector]
    a_v: Optional[Matrix]


@dataclass
class MultiLstmCache:
    steps: List[StepCache]
    attention: List[AttentionStep]
    n_outputs: int
    uses_attention: bool
    hidden_dim: int
    input_dim: int
    num_classes: int


class MultiLstmResult(NamedTuple):
    predictions: Matrix
    head_scores: Matrix
    head_probs: Matrix
    final: MultiLstmCarry
    cache: MultiLstmCache


def _check_config(params: MultiLstmParams, config: MultiLstmConfig) -> None:
    if params.n_outputs != config.n_outputs:
        raise ShapeError(
            f"parameters carry {params.n_outputs} output heads, config asks for "
            f"{config.n_outputs}"
        )
    if config.attention and params.attention is None:
        raise ShapeError("config enables attention but the parameters have none")
    params.lstm.validate()


def _output_weights(params: MultiLstmParams) -> Tuple[Matrix, Vector]:
    w_out = np.vstack([params.lstm.w_hy, *params.lag_w])
    b_out = np.concatenate([params.lstm.b_y, *params.lag_b])
    return w_out, b_out


def multilstm_forward(
    params: MultiLstmParams,
    features: Matrix,
    config: MultiLstmConfig,
    init: Optional[MultiLstmCarry] = None,
) -> MultiLstmResult:
    """Run the model over ``T×D`` features.

    Args:
        params: Model parameters.
        features: Frames of this call (a whole video or one chunk of it).
        config: Architecture configuration.
        init: Carry from the previous chunk; ``None`` starts a new video.

    Returns:
        Consolidated predictions over this call's frames, per-step head scores and
        probabilities (``T×N×C``), the carry for the next chunk, and the cache.
    """
    features = as_matrix(features)
    lstm = params.lstm
    if features.ndim != 2 or features.shape[0] == 0:
        raise ArgumentError("multilstm_forward needs a non-empty T×D sequence")
    if features.shape[1] != lstm.input_dim:
        raise ShapeError(
            f"features of width {features.shape[1]}, expected {lstm.input_dim}"
        )
    _check_config(params, config)
    carry = init
    if carry is None:
        carry = MultiLstmCarry.empty(lstm.hidden_dim, lstm.input_dim)

    frames = np.vstack([carry.context, features]) if carry.context.size else features
    first = frames.shape[0] - features.shape[0]
    window_len = config.window
    use_attention = config.attention
    a_v_all = _project_frames(params.attention.w_va, frames) if use_attention else None

    weights = stack_weights(lstm)
    w_out, b_out = _output_weights(params)
    n_out, n_classes = params.n_outputs, lstm.num_classes

    h, c = carry.state.h, carry.state.c
    steps: List[StepCache] = []
    attention_steps: List[AttentionStep] = []
    head_scores = np.empty((features.shape[0], n_out, n_classes))
    for j in range(features.shape[0]):
        p = first + j
        lo = max(0, p - window_len + 1)
        window = frames[lo : p + 1]
        if use_attention:
            a_h = np.tanh(params.attention.w_ha @ h)
            a_v = a_v_all[lo : p + 1]
            alpha = _attention_from_projections(params.attention.w_ae, a_h, a_v)
        else:
            a_h, a_v = None, None
            alpha = np.full(window.shape[0], 1.0 / window.shape[0])
        x = alpha @ window
        step = cell_forward(weights, x, h, c)
        head_scores[j] = (w_out @ step.h + b_out).reshape(n_out, n_classes)
        steps.append(step)
        attention_steps.append(
            AttentionStep(window=window, alpha=alpha, a_h=a_h, a_v=a_v)
        )
        h, c = step.h, step.c

    keep = window_len - 1
    context = frames[frames.shape[0] - keep :] if keep > 0 else frames[:0]
    head_probs = sigmoid(head_scores)
    cache = MultiLstmCache(
        steps=steps,
        attention=attention_steps,
        n_outputs=n_out,
        uses_attention=use_attention,
        hidden_dim=lstm.hidden_dim,
        input_dim=lstm.input_dim,
        num_classes=n_classes,
    )
    return MultiLstmResult(
        predictions=consolidate_outputs(head_probs),
        head_scores=head_scores,
        head_probs=head_probs,
        final=MultiLstmCarry(state=LstmState(h=h, c=c), context=context.copy()),
        cache=cache,
    )


def multilstm_backward(
    params: MultiLstmParams,
    cache: MultiLstmCache,
    d_head_scores: Matrix,
    d_final: Optional[LstmState] = None,
) -> Tuple[MultiLstmParams, LstmState]:
    """Gradients of all parameter groups, including the attention softmax path.

    Args:
        params: Parameters used for the forward pass.
        cache: Cache from :func:`multilstm_forward`.
        d_head_scores: ``T×N×C`` gradient w.r.t. the raw head scores. Use
            :func:`consolidation_backward` to start from consolidated predictions.
        d_final: Optional gradient arriving at the final LSTM state.

    Returns:
        Parameter gradients and the gradient w.r.t. the incoming LSTM state.
    """
    lstm = params.lstm
    if (
        cache.hidden_dim != lstm.hidden_dim
        or cache.input_dim != lstm.input_dim
        or cache.num_classes != lstm.num_classes
        or cache.n_outputs != params.n_outputs
        or (cache.uses_attention and params.attention is None)
    ):
        raise InternalConsistencyError("MultiLSTM cache does not match the parameters")
    d_head_scores = as_matrix(d_head_scores)
    n_steps = len(cache.steps)
    expected = (n_steps, params.n_outputs, lstm.num_classes)
    if d_head_scores.shape != expected:
        raise ShapeError(
            f"head-score gradient of shape {d_head_scores.shape}, expected {expected}"
        )

    weights = stack_weights(lstm)
    w_out, _ = _output_weights(params)
    hd = lstm.hidden_dim
    attention = params.attention if cache.uses_attention else None
    if attention is not None:
        d_w_ae = np.zeros_like(attention.w_ae)
        d_w_ha = np.zeros_like(attention.w_ha)
        d_w_va = np.zeros_like(attention.w_va)

    d_flat = d_head_scores.reshape(n_steps, -1)
    d_pre = np.empty((n_steps, 4 * hd))
    dh_next = d_final.h.copy() if d_final is not None else np.zeros(hd)
    dc_next = d_final.c.copy() if d_final is not None else np.zeros(hd)
    for t in reversed(range(n_steps)):
        step = cache.steps[t]
        dh = dh_next + w_out.T @ d_flat[t]
        d_pre[t], dx, dh_prev, dc_next = cell_backward(weights, step, dh, dc_next)
        if attention is not None:
            att = cache.attention[t]
            d_alpha = att.window @ dx
            d_logits = att.alpha * (d_alpha - att.alpha @ d_alpha)
            d_w_ae += (att.a_v * att.a_h).T @ d_logits
            d_a_h = attention.w_ae * (d_logits @ att.a_v)
            d_pre_h = d_a_h * (1.0 - att.a_h**2)
            d_w_ha += np.outer(d_pre_h, step.h_prev)
            dh_prev = dh_prev + attention.w_ha.T @ d_pre_h
            d_pre_v = np.outer(d_logits, attention.w_ae * att.a_h) * (1.0 - att.a_v**2)
            d_w_va += d_pre_v.T @ att.window
        dh_next = dh_prev

    grads = gate_gradients(
        d_pre,
        np.stack([s.x for s in cache.steps]),
        np.stack([s.h_prev for s in cache.steps]),
        hd,
    )
    d_w_out = d_flat.T @ np.stack([s.h for s in cache.steps])
    d_b_out = d_flat.sum(axis=0)
    n_classes = lstm.num_classes
    grads["w_hy"] = d_w_out[:n_classes]
    grads["b_y"] = d_b_out[:n_classes]
    heads = range(1, params.n_outputs)
    lag_w = [d_w_out[k * n_classes : (k + 1) * n_classes] for k in heads]
    lag_b = [d_b_out[k * n_classes : (k + 1) * n_classes] for k in heads]
    d_attention = None
    if attention is not None:
        d_attention = AttentionParams(w_ae=d_w_ae, w_ha=d_w_ha, w_va=d_w_va)
    elif params.attention is not None:
        d_attention = params.attention.zeros_like()
    grads_params = MultiLstmParams(
        lstm=LstmParams(**grads), attention=d_attention, lag_w=lag_w, lag_b=lag_b
    )
    return grads_params, LstmState(h=dh_next, c=dc_next)


def multilabel_loss(
    scores: Matrix, labels: Matrix, mask: Optional[np.ndarray] = None
) -> Tuple[float, Matrix]:
    """Summed per-class logistic loss and its gradient w.r.t. the raw scores.

    Args:
        scores: ``T×C`` raw scores.
        labels: ``T×C`` binary targets.
        mask: Length-``T`` booleans; ``False`` rows are excluded.

    Returns:
        ``(loss, d_scores)`` with ``d_scores = sigmoid(scores) - labels`` on kept rows
        and zero elsewhere.
    """
    scores = as_matrix(scores)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} disagree")
    if mask is None:
        keep = np.ones(scores.shape[0], dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
    if keep.shape != (scores.shape[0],):
        raise ShapeError(f"mask of shape {keep.shape} for {scores.shape[0]} rows")
    per_term = softplus(scores) - labels * scores
    loss = float(np.sum(per_term[keep]))
    grad = (sigmoid(scores) - labels) * keep[:, None]
    return loss, grad


def shift_labels(labels: np.ndarray, offset: int) -> Tuple[np.ndarray, np.ndarray]:
    """Shift labels so row ``t`` holds the label of frame ``t + offset``.

    Returns:
        ``(shifted, mask)``; rows whose source frame falls outside the video are zero
        and masked out.

    Raises:
        ArgumentError: If ``|offset| >= T``.
    """
    labels = np.asarray(labels)
    n_frames = labels.shape[0]
    if abs(offset) >= n_frames:
        raise ArgumentError(
            f"offset {offset} is not smaller than the {n_frames} frames"
        )
    shifted = np.zeros_like(labels)
    mask = np.zeros(n_frames, dtype=bool)
    if offset >= 0:
        shifted[: n_frames - offset] = labels[offset:]
        mask[: n_frames - offset] = True
    else:
        shifted[-offset:] = labels[: n_frames + offset]
        mask[-offset:] = True
    return shifted, mask

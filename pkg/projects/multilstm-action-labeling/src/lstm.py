"""Plain LSTM cell with an explicit forward and backward pass.

Gates follow the usual formulation::

    i = sigmoid(W_xi x + W_hi h_prev + b_i)
    f = sigmoid(W_xf x + W_hf h_prev + b_f)
    o = sigmoid(W_xo x + W_ho h_prev + b_o)
    g = tanh(W_xc x + W_hc h_prev + b_c)
    c = f * c_prev + i * g
    h = o * tanh(c)
    y = W_hy h + b_y

Internally the four gate blocks are stacked (order i, f, o, g) so one matrix-vector
product per input serves all gates. Every step runs the same operations on the same
operands whether a sequence is processed whole or in chunks, which keeps chunked and
full forward passes bit-identical.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from src.errors import ArgumentError, InternalConsistencyError, ShapeError
from src.numeric import Matrix, Vector, as_matrix, sigmoid, uniform_init
from src.params import ParameterGroup

GATES = ("i", "f", "o", "c")


@dataclass
class LstmParams(ParameterGroup):
    """Gate weights (H×D, H×H), biases (H) and the output projection (C×H, C)."""

    w_xi: Matrix
    w_hi: Matrix
    b_i: Vector
    w_xf: Matrix
    w_hf: Matrix
    b_f: Vector
    w_xo: Matrix
    w_ho: Matrix
    b_o: Vector
    w_xc: Matrix
    w_hc: Matrix
    b_c: Vector
    w_hy: Matrix
    b_y: Vector

    @property
    def input_dim(self) -> int:
        return int(self.w_xi.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.w_xi.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.w_hy.shape[0])

    def validate(self) -> None:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        expected = {}
        for gate in GATES:
            expected[f"w_x{gate}"] = (h, d)
            expected[f"w_h{gate}"] = (h, h)
            expected[f"b_{gate}"] = (h,)
        expected["w_hy"] = (c, h)
        expected["b_y"] = (c,)
        actual = self.shapes()
        wrong = {k: actual[k] for k in expected if actual[k] != expected[k]}
        if wrong:
            raise ShapeError(
                f"LSTM parameters inconsistent with D={d}, H={h}, C={c}: {wrong}"
            )


@dataclass
class LstmState:
    h: Vector
    c: Vector

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))

    def copy(self) -> "LstmState":
        return LstmState(h=self.h.copy(), c=self.c.copy())


@dataclass
class StepCache:
    """Activations of one step, enough to run the step backwards."""

    x: Vector
    h_prev: Vector
    c_prev: Vector
    i: Vector
    f: Vector
    o: Vector
    g: Vector
    c: Vector
    tanh_c: Vector
    h: Vector


@dataclass
class StackedWeights:
    """Gate blocks stacked as (4H×D), (4H×H), (4H) plus the output projection."""

    w_x: Matrix
    w_h: Matrix
    b: Vector
    w_out: Matrix
    b_out: Vector
    hidden_dim: int


def stack_weights(params: LstmParams) -> StackedWeights:
    return StackedWeights(
        w_x=np.vstack([params.w_xi, params.w_xf, params.w_xo, params.w_xc]),
        w_h=np.vstack([params.w_hi, params.w_hf, params.w_ho, params.w_hc]),
        b=np.concatenate([params.b_i, params.b_f, params.b_o, params.b_c]),
        w_out=params.w_hy,
        b_out=params.b_y,
        hidden_dim=params.hidden_dim,
    )


def cell_forward(
    weights: StackedWeights, x: Vector, h_prev: Vector, c_prev: Vector
) -> StepCache:
    hd = weights.hidden_dim
    pre = weights.w_x @ x + weights.w_h @ h_prev + weights.b
    gates = sigmoid(pre[: 3 * hd])
    i, f, o = gates[:hd], gates[hd : 2 * hd], gates[2 * hd :]
    g = np.tanh(pre[3 * hd :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return StepCache(
        x=x, h_prev=h_prev, c_prev=c_prev, i=i, f=f, o=o, g=g, c=c, tanh_c=tanh_c, h=h
    )


def cell_backward(
    weights: StackedWeights, step: StepCache, dh: Vector, dc: Vector
) -> Tuple[Vector, Vector, Vector, Vector]:
    """Backpropagate one cell step.

    Args:
        weights: Stacked weights used in the forward step.
        step: Cached activations of that step.
        dh: Total gradient reaching ``h`` of this step.
        dc: Gradient reaching ``c`` of this step from the following step.

    Returns:
        ``(d_pre, dx, dh_prev, dc_prev)`` where ``d_pre`` is the gradient of the
        stacked gate pre-activations (length 4H).
    """
    do = dh * step.tanh_c
    dc = dc + dh * step.o * (1.0 - step.tanh_c**2)
    di = dc * step.g
    dg = dc * step.i
    df = dc * step.c_prev
    dc_prev = dc * step.f
    d_pre = np.concatenate(
        [
            di * step.i * (1.0 - step.i),
            df * step.f * (1.0 - step.f),
            do * step.o * (1.0 - step.o),
            dg * (1.0 - step.g**2),
        ]
    )
    dx = weights.w_x.T @ d_pre
    dh_prev = weights.w_h.T @ d_pre
    return d_pre, dx, dh_prev, dc_prev


def gate_gradients(
    d_pre: Matrix, xs: Matrix, h_prevs: Matrix, hidden_dim: int
) -> dict:
    """Split accumulated stacked-gate gradients back into named LSTM fields."""
    d_w_x = d_pre.T @ xs
    d_w_h = d_pre.T @ h_prevs
    d_b = d_pre.sum(axis=0)
    grads = {}
    for k, gate in enumerate(GATES):
        rows = slice(k * hidden_dim, (k + 1) * hidden_dim)
        grads[f"w_x{gate}"] = d_w_x[rows]
        grads[f"w_h{gate}"] = d_w_h[rows]
        grads[f"b_{gate}"] = d_b[rows]
    return grads


def init_lstm_params(
    rng: np.random.Generator,
    input_dim: int,
    hidden_dim: int,
    num_classes: int,
    forget_bias: float = 1.0,
) -> LstmParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights and zero biases.

    The forget-gate bias starts at ``forget_bias``.
    """
    fields = {}
    for gate in GATES:
        fields[f"w_x{gate}"] = uniform_init(rng, (hidden_dim, input_dim), input_dim)
        fields[f"w_h{gate}"] = uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)
        fields[f"b_{gate}"] = np.zeros(hidden_dim)
    fields["b_f"] = np.full(hidden_dim, float(forget_bias))
    fields["w_hy"] = uniform_init(rng, (num_classes, hidden_dim), hidden_dim)
    fields["b_y"] = np.zeros(num_classes)
    return LstmParams(**fields)


def _check_state(params: LstmParams, state: LstmState) -> None:
    hd = params.hidden_dim
    if state.h.shape != (hd,) or state.c.shape != (hd,):
        raise ShapeError(
            f"state shapes h={state.h.shape}, c={state.c.shape} do not match H={hd}"
        )


def lstm_step(
    params: LstmParams, x: Vector, state: LstmState
) -> Tuple[LstmState, Vector, StepCache]:
    """One LSTM step.

    Returns:
        The new state, the class scores ``y`` and the cached activations.

    Raises:
        ShapeError: If ``x`` or ``state`` do not match the parameter dimensions.
    """
    x = as_matrix(x)
    if x.shape != (params.input_dim,):
        raise ShapeError(f"input of shape {x.shape}, expected ({params.input_dim},)")
    _check_state(params, state)
    weights = stack_weights(params)
    step = cell_forward(weights, x, state.h, state.c)
    y = weights.w_out @ step.h + weights.b_out
    return LstmState(h=step.h, c=step.c), y, step


@dataclass
class LstmCache:
    steps: List[StepCache]
    hidden_dim: int
    input_dim: int
    num_classes: int
    init: LstmState = field(repr=False)


class LstmForward(NamedTuple):
    ys: Matrix
    final: LstmState
    cache: LstmCache


def lstm_forward(
    params: LstmParams, xs: Matrix, init: Optional[LstmState] = None
) -> LstmForward:
    """Run the LSTM over a ``T×D`` sequence, starting from ``init`` (zeros if None).

    Raises:
        ArgumentError: If the sequence is empty.
        ShapeError: If the feature width or state does not match the parameters.
    """
    xs = as_matrix(xs)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ArgumentError("lstm_forward needs a non-empty T×D sequence")
    if xs.shape[1] != params.input_dim:
        raise ShapeError(
            f"features of width {xs.shape[1]}, expected {params.input_dim}"
        )
    init = init if init is not None else LstmState.zeros(params.hidden_dim)
    _check_state(params, init)

    weights = stack_weights(params)
    h, c = init.h, init.c
    steps: List[StepCache] = []
    ys = np.empty((xs.shape[0], params.num_classes))
    for t in range(xs.shape[0]):
        step = cell_forward(weights, xs[t], h, c)
        ys[t] = weights.w_out @ step.h + weights.b_out
        steps.append(step)
        h, c = step.h, step.c
    cache = LstmCache(
        steps=steps,
        hidden_dim=params.hidden_dim,
        input_dim=params.input_dim,
        num_classes=params.num_classes,
        init=init,
    )
    return LstmForward(ys=ys, final=LstmState(h=h, c=c), cache=cache)


def lstm_backward(
    params: LstmParams,
    cache: LstmCache,
    d_ys: Matrix,
    d_final: Optional[LstmState] = None,
) -> Tuple[LstmParams, LstmState]:
    """Gradients of every LSTM parameter and of the initial state.

    Args:
        params: Parameters used for the forward pass.
        cache: Cache returned by :func:`lstm_forward`.
        d_ys: ``T×C`` gradient of the loss w.r.t. the scores.
        d_final: Optional gradient arriving at the final state.

    Raises:
        InternalConsistencyError: If the cache was produced with other dimensions.
        ShapeError: If ``d_ys`` does not match the cached sequence.
    """
    if (cache.hidden_dim, cache.input_dim, cache.num_classes) != (
        params.hidden_dim,
        params.input_dim,
        params.num_classes,
    ):
        raise InternalConsistencyError("LSTM cache does not match the parameters")
    d_ys = as_matrix(d_ys)
    steps = cache.steps
    if d_ys.shape != (len(steps), params.num_classes):
        expected = (len(steps), params.num_classes)
        raise ShapeError(f"d_ys of shape {d_ys.shape}, expected {expected}")

    weights = stack_weights(params)
    hd = params.hidden_dim
    hs = np.stack([s.h for s in steps])
    d_pre = np.empty((len(steps), 4 * hd))
    dh_next = d_final.h.copy() if d_final is not None else np.zeros(hd)
    dc_next = d_final.c.copy() if d_final is not None else np.zeros(hd)
    for t in reversed(range(len(steps))):
        dh = dh_next + weights.w_out.T @ d_ys[t]
        d_pre[t], _, dh_next, dc_next = cell_backward(weights, steps[t], dh, dc_next)

    grads = gate_gradients(
        d_pre,
        np.stack([s.x for s in steps]),
        np.stack([s.h_prev for s in steps]),
        hd,
    )
    grads["w_hy"] = d_ys.T @ hs
    grads["b_y"] = d_ys.sum(axis=0)
    return LstmParams(**grads), LstmState(h=dh_next, c=dc_next)

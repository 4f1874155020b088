"""Finite-difference verification of every analytic backward pass.

Each check draws a small random instance and a random linear functional of the model
outputs (plus the final state, where there is one), then compares the analytic gradient
of that functional with central differences, coordinate by coordinate, for every
parameter and for the initial LSTM state.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import pandas as pd

from src.baseline import frame_backward, frame_forward, init_frame_params
from src.lstm import LstmState, init_lstm_params, lstm_backward, lstm_forward
from src.multilstm import (
    MultiLstmCarry,
    MultiLstmConfig,
    consolidation_backward,
    init_multilstm_params,
    multilstm_backward,
    multilstm_forward,
)
from src.numeric import Vector, finite_diff_gradient, relative_error, spawn_rngs
from src.params import ParameterGroup

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_SEED = 7


@dataclass
class GradCheckReport:
    name: str
    coordinates: int
    max_relative_error: float
    worst_coordinate: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_relative_error < self.tolerance)


def _coordinate_names(
    params: ParameterGroup, extra: List[Tuple[str, int]]
) -> List[str]:
    names = []
    for name, array in params.named_arrays().items():
        names.extend(f"{name}[{i}]" for i in range(array.size))
    for name, size in extra:
        names.extend(f"{name}[{i}]" for i in range(size))
    return names


def _compare(
    name: str,
    f: Callable[[Vector], float],
    theta: Vector,
    analytic: Vector,
    labels: List[str],
    tolerance: float,
) -> GradCheckReport:
    numeric = finite_diff_gradient(f, theta)
    errors = relative_error(analytic, numeric)
    worst = int(np.argmax(errors)) if errors.size else 0
    report = GradCheckReport(
        name=name,
        coordinates=int(theta.size),
        max_relative_error=float(errors.max()) if errors.size else 0.0,
        worst_coordinate=labels[worst] if labels else "",
        tolerance=tolerance,
    )
    logger.info(
        "%s: %d coordinates, max relative error %.3e (%s)",
        name,
        report.coordinates,
        report.max_relative_error,
        report.worst_coordinate,
    )
    return report


def _randomise(params: ParameterGroup, rng: np.random.Generator, scale: float = 0.5):
    """Nonzero values everywhere, biases included."""
    return params.map(lambda a: rng.uniform(-scale, scale, size=a.shape))


def check_lstm(
    rng: np.random.Generator,
    input_dim: int = 4,
    hidden: int = 5,
    num_classes: int = 3,
    steps: int = 7,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    params = _randomise(init_lstm_params(rng, input_dim, hidden, num_classes), rng)
    xs = rng.standard_normal((steps, input_dim))
    init = LstmState(h=rng.uniform(-0.5, 0.5, hidden), c=rng.standard_normal(hidden))
    r_ys = rng.standard_normal((steps, num_classes))
    r_final = LstmState(h=rng.standard_normal(hidden), c=rng.standard_normal(hidden))
    n = params.size

    def unpack(theta: Vector) -> Tuple[ParameterGroup, LstmState]:
        trial = params.copy()
        trial.assign_flat(theta[:n])
        return trial, LstmState(h=theta[n : n + hidden], c=theta[n + hidden :])

    def objective(theta: Vector) -> float:
        trial, state = unpack(theta)
        ys, final, _ = lstm_forward(trial, xs, state)
        return float(np.sum(r_ys * ys) + r_final.h @ final.h + r_final.c @ final.c)

    _, _, cache = lstm_forward(params, xs, init)
    grads, d_init = lstm_backward(params, cache, r_ys, d_final=r_final)
    theta = np.concatenate([params.flatten(), init.h, init.c])
    analytic = np.concatenate([grads.flatten(), d_init.h, d_init.c])
    labels = _coordinate_names(params, [("init.h", hidden), ("init.c", hidden)])
    return _compare("lstm", objective, theta, analytic, labels, tolerance)


def _multilstm_instance(
    rng, input_dim, hidden, num_classes, units, window, outputs, steps
):
    config = MultiLstmConfig(
        window=window, output_window=outputs, hidden=hidden, attention_units=units
    )
    params = _randomise(init_multilstm_params(rng, input_dim, num_classes, config), rng)
    features = rng.standard_normal((steps, input_dim))
    context = rng.standard_normal((window - 1, input_dim))
    init = LstmState(h=rng.uniform(-0.5, 0.5, hidden), c=rng.standard_normal(hidden))
    return config, params, features, context, init


def check_multilstm(
    rng: np.random.Generator,
    input_dim: int = 4,
    hidden: int = 5,
    num_classes: int = 3,
    units: int = 4,
    window: int = 3,
    outputs: int = 2,
    steps: int = 9,
    consolidated: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """Check the full MultiLSTM gradient, attention included.

    With ``consolidated`` the functional is taken of the consolidated per-frame
    probabilities instead of the raw head scores, which also exercises
    :func:`consolidation_backward`.
    """
    config, params, features, context, init = _multilstm_instance(
        rng, input_dim, hidden, num_classes, units, window, outputs, steps
    )
    out_shape = (steps, num_classes) if consolidated else (steps, outputs, num_classes)
    r_out = rng.standard_normal(out_shape)
    r_final = LstmState(h=rng.standard_normal(hidden), c=rng.standard_normal(hidden))
    n = params.size

    def run(theta: Vector):
        trial = params.copy()
        trial.assign_flat(theta[:n])
        state = LstmState(h=theta[n : n + hidden], c=theta[n + hidden :])
        carry = MultiLstmCarry(state=state, context=context)
        return multilstm_forward(trial, features, config, carry)

    def objective(theta: Vector) -> float:
        result = run(theta)
        out = result.predictions if consolidated else result.head_scores
        final = result.final.state
        return float(np.sum(r_out * out) + r_final.h @ final.h + r_final.c @ final.c)

    theta = np.concatenate([params.flatten(), init.h, init.c])
    result = run(theta)
    d_scores = r_out
    if consolidated:
        d_scores = consolidation_backward(r_out, result.head_probs)
    grads, d_init = multilstm_backward(params, result.cache, d_scores, d_final=r_final)
    analytic = np.concatenate([grads.flatten(), d_init.h, d_init.c])
    labels = _coordinate_names(params, [("init.h", hidden), ("init.c", hidden)])
    name = "multilstm-consolidated" if consolidated else "multilstm"
    return _compare(name, objective, theta, analytic, labels, tolerance)


def check_frame(
    rng: np.random.Generator,
    input_dim: int = 4,
    num_classes: int = 3,
    steps: int = 7,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    params = _randomise(init_frame_params(rng, input_dim, num_classes), rng)
    features = rng.standard_normal((steps, input_dim))
    r_scores = rng.standard_normal((steps, num_classes))

    def objective(theta: Vector) -> float:
        trial = params.copy()
        trial.assign_flat(theta)
        return float(np.sum(r_scores * frame_forward(trial, features)))

    analytic = frame_backward(params, features, r_scores).flatten()
    labels = _coordinate_names(params, [])
    return _compare("frame", objective, params.flatten(), analytic, labels, tolerance)


def run_gradcheck(
    seed: int = DEFAULT_SEED, tolerance: float = DEFAULT_TOLERANCE
) -> List[GradCheckReport]:
    """The whole suite on the default tiny dimensions."""
    rngs = spawn_rngs(seed, 4)
    return [
        check_frame(rngs[0], tolerance=tolerance),
        check_lstm(rngs[1], tolerance=tolerance),
        check_multilstm(rngs[2], tolerance=tolerance),
        check_multilstm(rngs[3], consolidated=True, tolerance=tolerance),
    ]


def reports_frame(reports: List[GradCheckReport]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "check": [r.name for r in reports],
            "coordinates": [r.coordinates for r in reports],
            "max_relative_error": [r.max_relative_error for r in reports],
            "worst_coordinate": [r.worst_coordinate for r in reports],
            "passed": [r.passed for r in reports],
        }
    )

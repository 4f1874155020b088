"""Tests for the plain LSTM cell and sequence passes."""

import numpy as np
import pytest

from src.errors import ArgumentError, InternalConsistencyError, ShapeError
from src.lstm import (
    LstmState,
    init_lstm_params,
    lstm_backward,
    lstm_forward,
    lstm_step,
)


@pytest.fixture
def params(rng):
    return init_lstm_params(rng, input_dim=4, hidden_dim=6, num_classes=3)


def test_init_shapes_and_forget_bias(params):
    params.validate()
    assert params.w_xi.shape == (6, 4)
    assert params.w_hc.shape == (6, 6)
    assert params.w_hy.shape == (3, 6)
    np.testing.assert_array_equal(params.b_f, np.ones(6))
    np.testing.assert_array_equal(params.b_i, np.zeros(6))


def test_zero_weights_fixed_point(params):
    zero = params.zeros_like()
    state, y, step = lstm_step(zero, np.ones(4), LstmState.zeros(6))
    np.testing.assert_array_equal(step.i, np.full(6, 0.5))
    np.testing.assert_array_equal(step.f, np.full(6, 0.5))
    np.testing.assert_array_equal(step.o, np.full(6, 0.5))
    np.testing.assert_array_equal(step.g, np.zeros(6))
    np.testing.assert_array_equal(state.c, np.zeros(6))
    np.testing.assert_array_equal(state.h, np.zeros(6))
    np.testing.assert_array_equal(y, np.zeros(3))


def test_saturated_forget_gate_keeps_cell(params, rng):
    params.b_f[...] = 50.0
    state = LstmState(h=rng.standard_normal(6), c=rng.standard_normal(6))
    x = rng.standard_normal(4)
    new_state, _, step = lstm_step(params, x, state)
    np.testing.assert_allclose(new_state.c, state.c + step.i * step.g, atol=1e-12)


def test_single_step_sequence_matches_lstm_step(params, rng):
    x = rng.standard_normal(4)
    ys, final, _ = lstm_forward(params, x[None, :])
    state, y, _ = lstm_step(params, x, LstmState.zeros(6))
    np.testing.assert_array_equal(ys[0], y)
    np.testing.assert_array_equal(final.h, state.h)


def test_chunked_forward_is_bit_identical(params, rng):
    xs = rng.standard_normal((11, 4))
    full, full_final, _ = lstm_forward(params, xs)
    head, head_final, _ = lstm_forward(params, xs[:4])
    tail, tail_final, _ = lstm_forward(params, xs[4:], head_final)
    np.testing.assert_array_equal(np.vstack([head, tail]), full)
    np.testing.assert_array_equal(tail_final.h, full_final.h)
    np.testing.assert_array_equal(tail_final.c, full_final.c)


def test_zero_params_give_zero_scores(params, rng):
    ys, _, _ = lstm_forward(params.zeros_like(), rng.standard_normal((5, 4)))
    np.testing.assert_array_equal(ys, np.zeros((5, 3)))


def test_forward_rejects_bad_input(params):
    with pytest.raises(ArgumentError):
        lstm_forward(params, np.zeros((0, 4)))
    with pytest.raises(ShapeError, match="width 5"):
        lstm_forward(params, np.zeros((3, 5)))
    with pytest.raises(ShapeError):
        lstm_forward(params, np.zeros((3, 4)), LstmState.zeros(5))


def test_zero_upstream_gradient_gives_zero_gradients(params, rng):
    _, _, cache = lstm_forward(params, rng.standard_normal((6, 4)))
    grads, d_init = lstm_backward(params, cache, np.zeros((6, 3)))
    assert grads.global_norm() == 0.0
    np.testing.assert_array_equal(d_init.h, np.zeros(6))


def test_backward_rejects_foreign_cache(params, rng):
    _, _, cache = lstm_forward(params, rng.standard_normal((6, 4)))
    other = init_lstm_params(rng, input_dim=4, hidden_dim=5, num_classes=3)
    with pytest.raises(InternalConsistencyError):
        lstm_backward(other, cache, np.zeros((6, 3)))


def test_backward_rejects_wrong_gradient_shape(params, rng):
    _, _, cache = lstm_forward(params, rng.standard_normal((6, 4)))
    with pytest.raises(ShapeError, match="d_ys"):
        lstm_backward(params, cache, np.zeros((5, 3)))

"""Tests for RMSProp, clipping, head targets and the training loop."""

import numpy as np
import pandas as pd
import pytest

from src.baseline import FrameParams
from src.config import ModelConfig, TrainConfig
from src.data import Dataset, LabelInterval, VideoRecord
from src.errors import ArgumentError, ConfigurationError, DivergenceError, ShapeError
from src.models import build_model
from src.numeric import make_rng
from src.training import (
    RmsPropState,
    clip_by_global_norm,
    evaluate_loss,
    head_targets,
    initial_params,
    rmsprop_update,
    stream_chunks,
    train,
)


def _scalar_params(w: float, b: float) -> FrameParams:
    return FrameParams(w=np.array([[w]]), b=np.array([b]))


def test_rmsprop_step_by_hand():
    params = _scalar_params(1.0, 0.0)
    state = RmsPropState(
        cache=params.zeros_like(), decay=0.9, epsilon=0.0, learning_rate=0.1
    )
    rmsprop_update(params, _scalar_params(2.0, 0.0), state)
    assert state.cache.w[0, 0] == pytest.approx(0.4)
    assert params.w[0, 0] - 1.0 == pytest.approx(-0.1 * 2.0 / np.sqrt(0.4))
    # zero denominator leaves the coordinate alone
    assert params.b[0] == 0.0


def test_rmsprop_zero_gradient_only_decays_cache():
    params = _scalar_params(1.5, -0.5)
    state = RmsPropState(cache=_scalar_params(1.0, 1.0), decay=0.9, learning_rate=0.1)
    rmsprop_update(params, _scalar_params(0.0, 0.0), state)
    assert params.w[0, 0] == 1.5
    assert params.b[0] == -0.5
    assert state.cache.w[0, 0] == pytest.approx(0.9)


def test_rmsprop_rejects_mismatched_gradients():
    params = _scalar_params(1.0, 0.0)
    state = RmsPropState.for_params(params)
    wrong = FrameParams(w=np.zeros((2, 1)), b=np.zeros(2))
    with pytest.raises(ShapeError):
        rmsprop_update(params, wrong, state)


def test_clip_by_global_norm():
    grads = _scalar_params(3.0, 4.0)
    assert clip_by_global_norm(grads, 1.0) == pytest.approx(5.0)
    assert grads.global_norm() == pytest.approx(1.0)
    small = _scalar_params(0.3, 0.4)
    clip_by_global_norm(small, 1.0)
    assert small.w[0, 0] == 0.3


def test_head_targets_follow_lagged_frames():
    shifted = np.array([[1], [0], [1], [1]])
    mask = np.array([True, True, True, False])
    targets, keep = head_targets(shifted, mask, start=0, length=4, n_outputs=2)
    assert targets.shape == (4, 2, 1)
    assert not keep[0, 1]  # would be frame -1
    assert targets[1, 1, 0] == 1  # step 1 about frame 0
    assert targets[2, 1, 0] == 0  # step 2 about frame 1
    assert not keep[3, 0]  # frame 3 is masked
    assert keep[3, 1]


def test_loss_at_zero_params_is_ln2_per_class(tiny_dataset):
    config = ModelConfig(architecture="frame", input_dim=5, num_classes=3)
    model = build_model(config)
    zero = model.template().zeros_like()
    loss = evaluate_loss(
        model, zero, tiny_dataset.features(), tiny_dataset.label_matrices()
    )
    assert loss == pytest.approx(3 * np.log(2.0))


def test_zero_epochs_return_initialization(tiny_dataset, multilstm_config):
    model = build_model(multilstm_config)
    result = train(model, tiny_dataset, TrainConfig(epochs=0, seed=4))
    expected = initial_params(model, 4)
    np.testing.assert_array_equal(
        result.checkpoint.params.flatten(), expected.flatten()
    )
    assert list(result.losses["epoch"]) == [0]


def test_same_seed_gives_identical_checkpoints(tiny_dataset, multilstm_config):
    model = build_model(multilstm_config)
    config = TrainConfig(epochs=2, minibatch=4, seed=8)
    first = train(model, tiny_dataset, config).checkpoint
    second = train(model, tiny_dataset, config).checkpoint
    assert first.same_as(second)
    other = train(model, tiny_dataset, config.model_copy(update={"seed": 9}))
    assert not first.same_as(other.checkpoint)


def test_training_does_not_modify_given_params(tiny_dataset, multilstm_config, rng):
    model = build_model(multilstm_config)
    start = model.init_params(rng)
    before = start.flatten().copy()
    train(model, tiny_dataset, TrainConfig(epochs=1, minibatch=5), params=start)
    np.testing.assert_array_equal(start.flatten(), before)


def test_frame_model_learns_planted_classes(synth_data):
    dataset = synth_data.train
    config = ModelConfig(
        architecture="frame",
        input_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
    )
    settings = TrainConfig(epochs=40, minibatch=20, learning_rate=0.05, seed=1)
    losses = train(build_model(config), dataset, settings).losses
    assert losses["mean_loss"].iloc[-1] < 0.5 * losses["mean_loss"].iloc[0]


def _fixed_instance() -> Dataset:
    """One 24-frame video whose features encode its labels plus a little noise."""
    gen = make_rng(21)
    record = VideoRecord(
        video_id="fixed",
        num_frames=24,
        frame_rate=10.0,
        intervals=[
            LabelInterval(0, 2, 8),
            LabelInterval(1, 6, 14),
            LabelInterval(2, 15, 22),
        ],
    )
    labels = record.labels(3).astype(np.float64)
    record.features = labels @ gen.standard_normal((3, 5))
    record.features += 0.1 * gen.standard_normal((24, 5))
    return Dataset(vocabulary=["a", "b", "c"], videos=[record])


def test_multilstm_full_batch_steps_halve_the_loss(multilstm_config):
    dataset = _fixed_instance()
    model = build_model(multilstm_config)
    # one minibatch per epoch, so 200 epochs are 200 full-batch steps
    settings = TrainConfig(epochs=200, minibatch=24, learning_rate=0.02, seed=2)
    first = train(model, dataset, settings)
    losses = first.losses["mean_loss"]
    assert len(losses) == 201
    assert losses.iloc[-1] <= 0.5 * losses.iloc[0]

    again = train(model, dataset, settings)
    pd.testing.assert_frame_equal(again.losses, first.losses)
    assert again.checkpoint.same_as(first.checkpoint)


@pytest.mark.parametrize("architecture", ["frame", "lstm", "multilstm"])
def test_training_chunks_match_a_full_forward_pass(architecture, rng):
    config = ModelConfig(
        architecture=architecture,
        input_dim=5,
        num_classes=3,
        hidden=6,
        attention_units=4,
        window=4,
    )
    model = build_model(config)
    params = model.init_params(rng)
    features = rng.standard_normal((70, 5))
    chunks = list(stream_chunks(model, params, features, 32))
    assert [start for start, _ in chunks] == [0, 32, 64]
    streamed = np.concatenate([out.head_scores for _, out in chunks])
    whole = model.forward_chunk(params, features, model.initial_carry())
    np.testing.assert_array_equal(streamed, whole.head_scores)


@pytest.mark.slow
def test_multilstm_learns_planted_classes(synth_data):
    dataset = synth_data.train
    config = ModelConfig(
        architecture="multilstm",
        input_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
        hidden=16,
        attention_units=8,
        window=4,
    )
    settings = TrainConfig(epochs=60, minibatch=20, learning_rate=0.02, seed=1)
    losses = train(build_model(config), dataset, settings).losses
    assert losses["mean_loss"].iloc[-1] < 0.5 * losses["mean_loss"].iloc[0]


def test_offset_training_masks_frames_past_the_end(tiny_dataset, multilstm_config):
    config = multilstm_config.model_copy(update={"offset": 3})
    result = train(build_model(config), tiny_dataset, TrainConfig(epochs=1))
    assert np.isfinite(result.losses["mean_loss"]).all()
    assert result.checkpoint.model_config.offset == 3


def test_train_rejects_empty_and_mismatched_data(tiny_dataset):
    model = build_model(ModelConfig(architecture="lstm", input_dim=5, num_classes=3))
    with pytest.raises(ArgumentError):
        train(model, Dataset(vocabulary=["a", "b", "c"], videos=[]), TrainConfig())
    wide = build_model(ModelConfig(architecture="lstm", input_dim=7, num_classes=3))
    with pytest.raises(ConfigurationError, match="D=7"):
        train(wide, tiny_dataset, TrainConfig())


def test_nonfinite_loss_raises_divergence():
    features = np.ones((6, 2))
    features[3, 0] = np.nan
    video = VideoRecord("v", 6, 10.0, [], features)
    dataset = Dataset(vocabulary=["a"], videos=[video])
    model = build_model(ModelConfig(architecture="frame", input_dim=2, num_classes=1))
    with pytest.raises(DivergenceError) as info:
        train(model, dataset, TrainConfig(epochs=1, minibatch=6))
    assert info.value.epoch == 1
    assert info.value.step == 1

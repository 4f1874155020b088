"""Tests for frame AP, detection, the label prior and offset sweeps."""

import logging

import numpy as np
import pandas as pd
import pytest

from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import ModelConfig, TrainConfig
from src.errors import CheckpointError, UndefinedMetricError
from src.evaluation import (
    ClassLengthStats,
    Detection,
    Segment,
    average_precision,
    checkpoint_path,
    class_length_stats,
    compare_per_class,
    conditional_label_table,
    detect,
    detection_ap,
    detection_map,
    mean_ap,
    offset_sweep,
    pre_event_mask,
    prior_baseline,
    temporal_iou,
)
from src.models import build_model, predict_dataset
from src.training import train


def test_average_precision_examples():
    assert average_precision([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0
    assert average_precision([0.1, 0.9], [1, 0]) == 0.5


def test_average_precision_needs_a_positive():
    with pytest.raises(UndefinedMetricError):
        average_precision([0.3, 0.2], [0, 0])


def test_average_precision_ties_follow_frame_order():
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5


def test_average_precision_matches_threshold_sweep(rng):
    for _ in range(1000):
        scores = rng.uniform(size=30)
        labels = rng.uniform(size=30) < 0.3
        if not labels.any():
            continue
        brute = np.mean(
            [
                np.sum(labels & (scores >= scores[i])) / np.sum(scores >= scores[i])
                for i in np.flatnonzero(labels)
            ]
        )
        assert average_precision(scores, labels) == pytest.approx(brute, abs=1e-9)


def test_average_precision_is_invariant_to_monotone_transforms(rng):
    scores = rng.uniform(size=50)
    labels = rng.uniform(size=50) < 0.4
    labels[0] = True
    assert average_precision(np.exp(3 * scores), labels) == average_precision(
        scores, labels
    )


def test_average_precision_mask():
    kept = [False, True, True]
    assert average_precision([0.9, 0.1, 0.8], [0, 1, 1], mask=kept) == 1.0


def test_mean_ap_is_the_class_mean():
    predictions = [np.array([[0.9, 0.1], [0.1, 0.9], [0.8, 0.0]])]
    labels = [np.array([[1, 1], [0, 0], [1, 0]])]
    result = mean_ap(predictions, labels, ["x", "y"])
    assert result.value == pytest.approx(0.75)
    assert list(result.per_class["ap"]) == [1.0, 0.5]
    assert list(result.per_class["positives"]) == [2, 1]


def test_mean_ap_of_ground_truth_is_one(synth_data):
    labels = synth_data.test.label_matrices()
    predictions = [z.astype(np.float64) for z in labels]
    assert mean_ap(predictions, labels).value == 1.0


def test_mean_ap_skips_classes_without_positives(caplog):
    predictions = [np.array([[0.9, 0.2], [0.1, 0.3]])]
    labels = [np.array([[1, 0], [0, 0]])]
    with caplog.at_level(logging.WARNING):
        result = mean_ap(predictions, labels, ["x", "y"])
    assert result.value == 1.0
    assert np.isnan(result.per_class["ap"][1])
    assert "Class y has no positive frames" in caplog.text


def test_mean_ap_with_no_positives_at_all():
    with pytest.raises(UndefinedMetricError):
        mean_ap([np.zeros((3, 2))], [np.zeros((3, 2))])


def test_class_length_stats_floor_and_defaults(caplog):
    labels = [np.array([[1, 0], [1, 0], [0, 0], [1, 0], [1, 0]])]
    with caplog.at_level(logging.WARNING):
        stats = class_length_stats(labels)
    assert stats.mean[0] == 2.0
    assert stats.std[0] == 1.0  # both instances have length 2
    assert (stats.mean[1], stats.std[1]) == (1.0, 1.0)
    assert "Class 1 has no training instances" in caplog.text


def test_detect_scores_by_hand():
    exact = ClassLengthStats(mean=np.array([2.0]), std=np.array([1.0]))
    (detection,) = detect(np.array([0.5, 0.5]), 0, exact)
    assert (detection.start, detection.end) == (0, 2)
    assert detection.score == pytest.approx(1.0)

    short = ClassLengthStats(mean=np.array([1.0]), std=np.array([1.0]))
    (detection,) = detect(np.array([0.5, 0.5]), 0, short)
    assert detection.score == pytest.approx(np.exp(-0.01))
    assert detection.score == pytest.approx(0.99005, abs=1e-5)


def test_detect_below_threshold_is_empty():
    stats = ClassLengthStats(mean=np.ones(1), std=np.ones(1))
    assert detect(np.array([0.05, 0.09, 0.0]), 0, stats, threshold=0.1) == []


def test_detections_partition_positive_frames(rng):
    stats = ClassLengthStats(mean=np.full(1, 4.0), std=np.full(1, 2.0))
    probs = rng.uniform(size=200)
    detections = detect(probs, 0, stats, threshold=0.4)
    covered = np.zeros(200, dtype=int)
    for d in detections:
        covered[d.start : d.end] += 1
        assert d.score > 0
    np.testing.assert_array_equal(covered, (probs >= 0.4).astype(int))


def test_temporal_iou():
    assert temporal_iou((0, 10), (5, 15)) == pytest.approx(5 / 15)
    assert temporal_iou((0, 3), (3, 6)) == 0.0


def test_detection_ap_examples():
    truth = [Segment("v", 0, 10), Segment("v", 20, 25)]
    exact = [Detection(0, 0, 10, 0.4, "v"), Detection(0, 20, 25, 0.9, "v")]
    assert detection_ap(exact, truth, overlap=1.0) == 1.0
    assert detection_ap([Detection(0, 40, 50, 1.0, "v")], truth[:1]) == 0.0
    assert detection_ap([], truth) == 0.0


def test_detection_ap_counts_missed_instances():
    truth = [Segment("v", 0, 10), Segment("v", 20, 25)]
    one = [Detection(0, 0, 10, 0.4, "v")]
    assert detection_ap(one, truth) == 0.5


def test_detection_ap_matches_within_a_video():
    truth = [Segment("v", 0, 10)]
    elsewhere = [Detection(0, 0, 10, 1.0, "w")]
    assert detection_ap(elsewhere, truth) == 0.0


def test_detection_map(synth_data):
    labels = synth_data.test.label_matrices()
    ids = [v.video_id for v in synth_data.test.videos]
    stats = class_length_stats(synth_data.train.label_matrices())
    detections = [
        d
        for z, video_id in zip(labels, ids)
        for c in range(z.shape[1])
        for d in detect(z[:, c].astype(float), c, stats, video_id=video_id)
    ]
    result = detection_map(detections, labels, ids, synth_data.test.vocabulary)
    assert result.value == 1.0
    assert list(result.per_class.columns) == ["class", "ap", "instances", "detections"]


def test_pre_event_mask():
    labels = np.array([[0], [0], [1], [1], [0], [0]])
    np.testing.assert_array_equal(
        pre_event_mask(labels, 0, offset=2), [True, True, False, False, False, False]
    )


def test_conditional_table_and_prior():
    # classes alternate, never together: the offset-0 table is the identity
    labels = [np.array([[1, 0], [0, 1], [1, 0], [0, 1]])]
    np.testing.assert_array_equal(conditional_label_table(labels, 0), np.eye(2))
    np.testing.assert_array_equal(
        conditional_label_table(labels, 1), [[0.0, 1.0], [1.0, 0.0]]
    )
    predictions = [np.array([[0.3, 0.6], [0.9, 0.1]])]
    (same,) = prior_baseline(labels, predictions, 0)
    np.testing.assert_array_equal(same, predictions[0])


def test_conditional_table_on_uniform_labels(rng):
    labels = [(rng.uniform(size=(5000, 3)) < 0.5).astype(np.uint8)]
    table = conditional_label_table(labels, 4)
    np.testing.assert_allclose(table, np.full((3, 3), 0.5), atol=0.05)


def test_compare_per_class():
    first = pd.DataFrame({"class": ["x", "y"], "ap": [0.5, 0.9]})
    second = pd.DataFrame({"class": ["x", "y"], "ap": [0.8, 0.7]})
    merged = compare_per_class(first, second, ("lstm", "multilstm"))
    assert list(merged["class"]) == ["x", "y"]
    assert merged["diff"].iloc[0] == pytest.approx(0.3)


def _train_offset_models(dataset, directory, offsets):
    for offset in offsets:
        config = ModelConfig(
            architecture="multilstm",
            input_dim=dataset.feature_dim,
            num_classes=dataset.num_classes,
            hidden=4,
            attention_units=3,
            window=3,
            offset=offset,
        )
        result = train(build_model(config), dataset, TrainConfig(epochs=1, seed=2))
        save_checkpoint(result.checkpoint, checkpoint_path(directory, offset))


def test_offset_sweep(synth_data, tmp_path):
    _train_offset_models(synth_data.train, tmp_path, [0, 2])
    table = offset_sweep(
        tmp_path,
        [0, 2],
        synth_data.test,
        train_labels=synth_data.train.label_matrices(),
    )
    assert list(table["offset_frames"]) == [0, 2]
    assert list(table["offset_seconds"]) == [0.0, 0.2]
    assert table["map"].between(0, 1).all()
    assert table["prior_map"].between(0, 1).all()

    base = load_checkpoint(checkpoint_path(tmp_path, 0))
    predictions = predict_dataset(
        build_model(base.model_config), base.params, synth_data.test.features()
    )
    expected = mean_ap(predictions, synth_data.test.label_matrices()).value
    assert table["map"].iloc[0] == expected


def test_offset_sweep_names_the_missing_offset(synth_data, tmp_path):
    _train_offset_models(synth_data.train, tmp_path, [0])
    with pytest.raises(CheckpointError, match="offset 5"):
        offset_sweep(tmp_path, [0, 5], synth_data.test)

"""Tests for structured retrieval queries and label co-occurrence."""

import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import VocabularyError
from src.numeric import make_rng
from src.retrieval import (
    SequentialHit,
    SequentialQuery,
    cooccurrence_frame,
    cooccurrence_matrix,
    retrieve_cooccurring,
    retrieve_sequential,
    sequential_frame,
)

VOCABULARY = ["a", "b"]


def _query(**values):
    return SequentialQuery(**{"first": "a", "second": "b", **values})


def test_sequential_single_pair():
    predictions = [np.array([[1.0, 0.0], [0.0, 1.0]])]
    hits = retrieve_sequential(predictions, ["v"], VOCABULARY, _query(max_gap=1))
    assert hits == [SequentialHit("v", 0, 1, 1.0)]


def test_sequential_zero_gap_finds_nothing():
    predictions = [np.array([[1.0, 1.0], [1.0, 1.0]])]
    assert retrieve_sequential(predictions, ["v"], VOCABULARY, _query(max_gap=0)) == []


def test_sequential_respects_the_gap():
    probs = np.zeros((10, 2))
    probs[0, 0] = 1.0
    probs[6, 1] = 1.0
    near = retrieve_sequential([probs], ["v"], VOCABULARY, _query(max_gap=5))
    far = retrieve_sequential([probs], ["v"], VOCABULARY, _query(max_gap=6))
    assert near[0].score == 0.0
    assert far[0] == SequentialHit("v", 0, 6, 1.0)


def test_sequential_suppression():
    probs = np.zeros((10, 2))
    probs[0, 0], probs[1, 0] = 0.9, 0.8
    probs[3, 1] = 1.0

    plain = retrieve_sequential(
        [probs], ["v"], VOCABULARY, _query(max_gap=5, top_k=2, suppress=False)
    )
    assert [(h.t_first, h.t_second) for h in plain] == [(0, 3), (1, 3)]
    assert plain[1].score == pytest.approx(0.8)

    suppressed = retrieve_sequential(
        [probs], ["v"], VOCABULARY, _query(max_gap=5, top_k=2)
    )
    assert suppressed[0] == SequentialHit("v", 0, 3, pytest.approx(0.9))
    for hit in suppressed[1:]:
        assert abs(hit.t_first - 0) > 5 and abs(hit.t_second - 3) > 5


def test_sequential_ranks_across_videos():
    weak = np.array([[0.5, 0.0], [0.0, 0.5]])
    strong = np.array([[0.9, 0.0], [0.0, 0.9]])
    hits = retrieve_sequential(
        [weak, strong], ["weak", "strong"], VOCABULARY, _query(max_gap=1)
    )
    assert [h.video_id for h in hits] == ["strong", "weak"]
    assert list(sequential_frame(hits).columns) == list(SequentialHit._fields)


def test_unknown_class():
    with pytest.raises(VocabularyError, match="unknown class 'z'"):
        retrieve_sequential([np.zeros((3, 2))], ["v"], VOCABULARY, _query(first="z"))
    with pytest.raises(VocabularyError):
        retrieve_cooccurring([np.zeros((3, 2))], ["v"], VOCABULARY, "a", "z")


def test_query_rejects_negative_gap():
    with pytest.raises(ValidationError):
        _query(max_gap=-1)


def test_cooccurring_scores_products():
    predictions = [np.array([[0.8, 0.5], [0.1, 0.1]]), np.array([[0.3, 0.3]])]
    hits = retrieve_cooccurring(predictions, ["v", "w"], VOCABULARY, "a", "b", top_k=2)
    assert (hits[0].video_id, hits[0].frame) == ("v", 0)
    assert hits[0].score == pytest.approx(0.4)
    assert (hits[1].video_id, hits[1].frame) == ("w", 0)


def test_cooccurrence_pmi():
    labels = [np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1], [0, 0, 1]])]
    pmi = cooccurrence_matrix(labels)
    np.testing.assert_allclose(pmi, pmi.T)
    assert pmi[0, 1] == pytest.approx(np.log(5 / 3))
    assert pmi[0, 1] > 0 > pmi[0, 2]
    frame = cooccurrence_frame(pmi, ["x", "y", "z"])
    assert list(frame.columns) == ["class", "x", "y", "z"]


def test_independent_classes_have_pmi_near_zero():
    gen = make_rng(8)
    labels = [(gen.uniform(size=(2500, 2)) < 0.3).astype(np.uint8) for _ in range(8)]
    assert sum(len(z) for z in labels) >= 10_000
    pmi = cooccurrence_matrix(labels)
    assert abs(pmi[0, 1]) < 0.1

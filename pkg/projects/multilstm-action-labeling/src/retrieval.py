"""Structured queries over per-frame predictions, and label co-occurrence.

Scores are products of per-frame probabilities, a soft "A and B". Ranking ties are
broken by candidate order: video order, then frame, then gap.
"""

import logging
from typing import List, NamedTuple, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.errors import VocabularyError
from src.numeric import Matrix

logger = logging.getLogger(__name__)


class SequentialQuery(BaseModel):
    """``first`` and then ``second``, at most ``max_gap`` frames apart."""

    model_config = ConfigDict(extra="forbid")

    first: str
    second: str
    max_gap: int = Field(10, ge=0)
    top_k: int = Field(10, ge=1)
    suppress: bool = True


class SequentialHit(NamedTuple):
    video_id: str
    t_first: int
    t_second: int
    score: float


class FrameHit(NamedTuple):
    video_id: str
    frame: int
    score: float


def class_id(vocabulary: Sequence[str], name: str) -> int:
    try:
        return list(vocabulary).index(name)
    except ValueError:
        raise VocabularyError(
            f"unknown class {name!r}; known classes: {', '.join(vocabulary)}"
        ) from None


def retrieve_sequential(
    predictions: Sequence[Matrix],
    video_ids: Sequence[str],
    vocabulary: Sequence[str],
    query: SequentialQuery,
) -> List[SequentialHit]:
    """Top pairs ``(tA, tB)`` with ``0 < tB - tA <= max_gap``.

    Each pair is scored ``pA[tA] * pB[tB]``.

    With ``query.suppress`` a candidate is skipped when its ``tA`` or its ``tB`` lies
    within ``max_gap`` frames of the corresponding frame of an already selected pair
    in the same video.

    Raises:
        VocabularyError: If either class name is unknown.
    """
    a = class_id(vocabulary, query.first)
    b = class_id(vocabulary, query.second)
    videos, starts, gaps, scores = [], [], [], []
    for v, probs in enumerate(predictions):
        probs = np.asarray(probs, dtype=np.float64)
        n_frames = probs.shape[0]
        for gap in range(1, min(query.max_gap, n_frames - 1) + 1):
            t = np.arange(n_frames - gap)
            videos.append(np.full(t.size, v))
            starts.append(t)
            gaps.append(np.full(t.size, gap))
            scores.append(probs[: n_frames - gap, a] * probs[gap:, b])
    if not scores:
        return []
    video = np.concatenate(videos)
    start = np.concatenate(starts)
    gap = np.concatenate(gaps)
    score = np.concatenate(scores)
    # candidates are ordered by (video, frame, gap) before the stable sort on score
    canonical = np.lexsort((gap, start, video))
    order = canonical[np.argsort(-score[canonical], kind="stable")]

    hits: List[SequentialHit] = []
    chosen: List[tuple] = []
    for index in order:
        v, t_a = int(video[index]), int(start[index])
        t_b = t_a + int(gap[index])
        gap_limit = query.max_gap
        if query.suppress and any(
            v == cv and (abs(t_a - ca) <= gap_limit or abs(t_b - cb) <= gap_limit)
            for cv, ca, cb in chosen
        ):
            continue
        chosen.append((v, t_a, t_b))
        hits.append(SequentialHit(video_ids[v], t_a, t_b, float(score[index])))
        if len(hits) == query.top_k:
            break
    return hits


def retrieve_cooccurring(
    predictions: Sequence[Matrix],
    video_ids: Sequence[str],
    vocabulary: Sequence[str],
    first: str,
    second: str,
    top_k: int = 10,
) -> List[FrameHit]:
    """Frames ranked by ``pA[t] * pB[t]``, highest first."""
    a = class_id(vocabulary, first)
    b = class_id(vocabulary, second)
    per_video = [np.asarray(p, dtype=np.float64) for p in predictions]
    score = np.concatenate([p[:, a] * p[:, b] for p in per_video])
    video = np.concatenate([np.full(p.shape[0], v) for v, p in enumerate(per_video)])
    frame = np.concatenate([np.arange(p.shape[0]) for p in per_video])
    order = np.argsort(-score, kind="stable")[:top_k]
    return [
        FrameHit(video_ids[video[i]], int(frame[i]), float(score[i])) for i in order
    ]


def cooccurrence_matrix(labels: Sequence[np.ndarray]) -> Matrix:
    """Pointwise mutual information between classes over all frames.

    ``PMI(a, b) = log((n_ab + 1) (n + 1) / ((n_a + 1) (n_b + 1)))`` with ``n`` frames,
    ``n_a`` frames where ``a`` is active and ``n_ab`` frames where both are.
    """
    z = np.concatenate([np.asarray(m) for m in labels]).astype(np.int64)
    n_frames = z.shape[0]
    joint = z.T @ z
    marginal = np.diag(joint).astype(np.float64)
    return np.log(
        (joint + 1.0) * (n_frames + 1.0) / np.outer(marginal + 1.0, marginal + 1.0)
    )


def cooccurrence_frame(matrix: Matrix, vocabulary: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame(matrix, columns=list(vocabulary))
    frame.insert(0, "class", list(vocabulary))
    return frame


def sequential_frame(hits: Sequence[SequentialHit]) -> pd.DataFrame:
    return pd.DataFrame(list(hits), columns=list(SequentialHit._fields))


def cooccurring_frame(hits: Sequence[FrameHit]) -> pd.DataFrame:
    return pd.DataFrame(list(hits), columns=list(FrameHit._fields))

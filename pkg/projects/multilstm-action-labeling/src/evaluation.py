"""Frame-level AP, detection post-processing, offset sweeps and the label prior.

Frame AP ranks every frame of every video by a class's predicted probability. Ties are
broken by position in that concatenated order (earlier frames rank first), so results
are deterministic.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.checkpoint import load_checkpoint
from src.data import Dataset, label_runs
from src.errors import CheckpointError, ShapeError, UndefinedMetricError
from src.models import build_model, predict_dataset
from src.multilstm import shift_labels
from src.numeric import Matrix, Vector

logger = logging.getLogger(__name__)


def average_precision(
    scores: Vector, labels: np.ndarray, mask: Optional[np.ndarray] = None
) -> float:
    """Mean over positives of the precision at each positive's rank.

    Args:
        scores: Per-frame scores for one class.
        labels: Binary labels of the same length.
        mask: Optional booleans; only ``True`` frames take part.

    Raises:
        ShapeError: If the lengths disagree.
        UndefinedMetricError: If no (kept) frame is positive.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1) > 0
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape != scores.shape:
            raise ShapeError(f"mask of length {mask.size} for {scores.size} frames")
        scores, labels = scores[mask], labels[mask]
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError(
            "average precision needs at least one positive frame"
        )
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / n_pos)


class MeanAp(NamedTuple):
    value: float
    per_class: pd.DataFrame


def mean_ap(
    predictions: Sequence[Matrix],
    labels: Sequence[np.ndarray],
    vocabulary: Optional[Sequence[str]] = None,
    masks: Optional[Sequence[np.ndarray]] = None,
) -> MeanAp:
    """Unweighted mean of per-class frame AP over a set of videos.

    Classes without positive frames are reported with ``ap = NaN`` and left out of the
    mean, with a warning.

    Raises:
        ShapeError: If a prediction matrix and its labels differ in shape.
        UndefinedMetricError: If no class has a positive frame.
    """
    for p, z in zip(predictions, labels):
        if np.shape(p) != np.shape(z):
            raise ShapeError(
                f"predictions {np.shape(p)} and labels {np.shape(z)} disagree"
            )
    scores = np.concatenate([np.asarray(p, dtype=np.float64) for p in predictions])
    truth = np.concatenate([np.asarray(z) for z in labels])
    if masks is None:
        keep = np.ones(truth.shape[0], dtype=bool)
    else:
        keep = np.concatenate([np.asarray(m, dtype=bool) for m in masks])
    n_classes = truth.shape[1]
    if vocabulary is not None:
        names = list(vocabulary)
    else:
        names = [str(c) for c in range(n_classes)]
    rows = []
    for c in range(n_classes):
        positives = int(np.count_nonzero(truth[keep, c]))
        try:
            ap = average_precision(scores[:, c], truth[:, c], keep)
        except UndefinedMetricError:
            logger.warning("Class %s has no positive frames; skipped in mAP", names[c])
            ap = float("nan")
        rows.append({"class": names[c], "ap": ap, "positives": positives})
    per_class = pd.DataFrame(rows)
    defined = per_class["ap"].dropna()
    if defined.empty:
        raise UndefinedMetricError("no class has a positive frame")
    return MeanAp(value=float(defined.mean()), per_class=per_class)


@dataclass(frozen=True)
class ClassLengthStats:
    """Mean and standard deviation of training instance lengths, in frames."""

    mean: Vector
    std: Vector


def class_length_stats(
    labels: Sequence[np.ndarray], sigma_floor: float = 1.0
) -> ClassLengthStats:
    """Per-class instance-length statistics from training labels.

    ``std`` is floored at ``sigma_floor``. Classes without instances get ``mean = 1``
    and ``std = 1``.
    """
    n_classes = np.shape(labels[0])[1]
    mean = np.ones(n_classes)
    std = np.ones(n_classes)
    for c in range(n_classes):
        lengths = [e - s for z in labels for s, e in label_runs(np.asarray(z)[:, c])]
        if not lengths:
            logger.warning("Class %d has no training instances; using mean=1, std=1", c)
            continue
        mean[c] = float(np.mean(lengths))
        std[c] = max(float(np.std(lengths)), sigma_floor)
    return ClassLengthStats(mean=mean, std=std)


@dataclass(frozen=True)
class Detection:
    class_id: int
    start: int
    end: int
    score: float
    video_id: str = ""


class Segment(NamedTuple):
    video_id: str
    start: int
    end: int


def detect(
    probs: Vector,
    class_id: int,
    stats: ClassLengthStats,
    threshold: float = 0.1,
    length_penalty: float = 0.01,
    video_id: str = "",
) -> List[Detection]:
    """Group consecutive frames with ``p >= threshold`` into scored detections.

    A run ``p_1..p_L`` scores ``sum(p) * exp(-alpha * (L - mu)**2 / sigma**2)`` with
    ``mu``/``sigma`` the class's training length statistics.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    mu, sigma = stats.mean[class_id], stats.std[class_id]
    detections = []
    for start, end in label_runs(probs >= threshold):
        length = end - start
        penalty = np.exp(-length_penalty * (length - mu) ** 2 / sigma**2)
        detections.append(
            Detection(
                class_id=class_id,
                start=start,
                end=end,
                score=float(probs[start:end].sum() * penalty),
                video_id=video_id,
            )
        )
    return detections


def detect_dataset(
    predictions: Sequence[Matrix],
    video_ids: Sequence[str],
    stats: ClassLengthStats,
    threshold: float = 0.1,
    length_penalty: float = 0.01,
) -> List[Detection]:
    return [
        detection
        for probs, video_id in zip(predictions, video_ids)
        for c in range(np.shape(probs)[1])
        for detection in detect(
            probs[:, c], c, stats, threshold, length_penalty, video_id
        )
    ]


def detections_frame(
    detections: Sequence[Detection], vocabulary: Sequence[str]
) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "video_id": [d.video_id for d in detections],
            "class": [vocabulary[d.class_id] for d in detections],
            "start": [d.start for d in detections],
            "end": [d.end for d in detections],
            "score": [d.score for d in detections],
        },
        columns=["video_id", "class", "start", "end", "score"],
    )


def temporal_iou(a: Tuple[int, int], b: Tuple[int, int]) -> float:
    """Intersection-over-union of two end-exclusive frame intervals."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def detection_ap(
    detections: Sequence[Detection], truth: Sequence[Segment], overlap: float = 0.1
) -> float:
    """AP of one class's detections against its ground-truth instances.

    Detections are visited by descending score; each is matched to the unmatched
    instance of the same video with the highest IoU, if that IoU reaches ``overlap``.
    Unmatched instances count as missed, so the denominator is the instance count.

    Raises:
        UndefinedMetricError: If there are no ground-truth instances.
    """
    if not truth:
        raise UndefinedMetricError(
            "detection AP needs at least one ground-truth instance"
        )
    matched = [False] * len(truth)
    ranked = sorted(detections, key=lambda d: -d.score)
    hits = np.zeros(len(ranked), dtype=bool)
    for rank, det in enumerate(ranked):
        best, best_iou = -1, -1.0
        for index, segment in enumerate(truth):
            if matched[index] or segment.video_id != det.video_id:
                continue
            iou = temporal_iou((det.start, det.end), (segment.start, segment.end))
            if iou >= overlap and iou > best_iou:
                best, best_iou = index, iou
        if best >= 0:
            matched[best] = True
            hits[rank] = True
    if not ranked:
        return 0.0
    precision = np.cumsum(hits) / np.arange(1, len(ranked) + 1)
    return float(precision[hits].sum() / len(truth))


def ground_truth_segments(
    labels: Sequence[np.ndarray], video_ids: Sequence[str], class_id: int
) -> List[Segment]:
    return [
        Segment(video_id, start, end)
        for z, video_id in zip(labels, video_ids)
        for start, end in label_runs(np.asarray(z)[:, class_id])
    ]


def detection_map(
    detections: Sequence[Detection],
    labels: Sequence[np.ndarray],
    video_ids: Sequence[str],
    vocabulary: Sequence[str],
    overlap: float = 0.1,
) -> MeanAp:
    """Detection AP per class and its mean over classes with instances."""
    rows = []
    for c, name in enumerate(vocabulary):
        truth = ground_truth_segments(labels, video_ids, c)
        mine = [d for d in detections if d.class_id == c]
        try:
            ap = detection_ap(mine, truth, overlap)
        except UndefinedMetricError:
            logger.warning("Class %s has no ground-truth instances; skipped", name)
            ap = float("nan")
        rows.append(
            {
                "class": name,
                "ap": ap,
                "instances": len(truth),
                "detections": len(mine),
            }
        )
    per_class = pd.DataFrame(rows)
    defined = per_class["ap"].dropna()
    if defined.empty:
        raise UndefinedMetricError("no class has a ground-truth instance")
    return MeanAp(value=float(defined.mean()), per_class=per_class)


def pre_event_mask(labels: np.ndarray, class_id: int, offset: int = 0) -> np.ndarray:
    """Frames whose input does not yet show ``class_id`` and whose target exists.

    With offset ``s`` a prediction at frame ``t`` targets label frame ``t + s``; the
    mask keeps frames where the class is inactive at ``t`` and ``t + s`` is inside
    the video.
    """
    labels = np.asarray(labels)
    _, valid = shift_labels(labels, offset)
    return valid & (labels[:, class_id] == 0)


def conditional_label_table(labels: Sequence[np.ndarray], offset: int) -> Matrix:
    """``P[c, c2]`` = P(class ``c2`` active at ``t + s`` | class ``c`` active at ``t``).

    Rows of classes never active at a valid ``t`` are zero.
    """
    n_classes = np.shape(labels[0])[1]
    joint = np.zeros((n_classes, n_classes))
    counts = np.zeros(n_classes)
    for z in labels:
        z = np.asarray(z, dtype=np.float64)
        if abs(offset) >= z.shape[0]:
            continue
        shifted, valid = shift_labels(z, offset)
        here = z[valid]
        joint += here.T @ shifted[valid]
        counts += here.sum(axis=0)
    seen = counts[:, None] > 0
    return np.divide(joint, counts[:, None], out=np.zeros_like(joint), where=seen)


def prior_baseline(
    train_labels: Sequence[np.ndarray], predictions: Sequence[Matrix], offset: int
) -> List[Matrix]:
    """Offset-``s`` predictions from offset-0 predictions and training label statistics.

    Row ``t`` of each result predicts label frame ``t + s`` as
    ``sum_c P(c2 at t + s | c at t) * p[t, c]``, clipped to ``[0, 1]``.
    """
    table = conditional_label_table(train_labels, offset)
    return [
        np.clip(np.asarray(p, dtype=np.float64) @ table, 0.0, 1.0)
        for p in predictions
    ]


def compare_per_class(
    first: pd.DataFrame,
    second: pd.DataFrame,
    names: Tuple[str, str] = ("first", "second"),
) -> pd.DataFrame:
    """Join two per-class AP tables; ``diff`` is ``second - first``, largest first."""
    a, b = names
    merged = first[["class", "ap"]].merge(
        second[["class", "ap"]], on="class", suffixes=(f"_{a}", f"_{b}")
    )
    merged["diff"] = merged[f"ap_{b}"] - merged[f"ap_{a}"]
    improved = int((merged["diff"] > 0).sum())
    logger.info("%s improves on %s for %d of %d classes", b, a, improved, len(merged))
    merged = merged.sort_values("diff", ascending=False, kind="stable")
    return merged.reset_index(drop=True)


def checkpoint_path(checkpoint_dir: Path, offset: int) -> Path:
    return Path(checkpoint_dir) / f"offset_{offset}.ckpt"


def predict_with_checkpoint(
    path: Path, dataset: Dataset, workers: int = 1
) -> Tuple[List[Matrix], float]:
    """Predictions of a stored model on every video, and the model's frame rate."""
    checkpoint = load_checkpoint(path)
    model = build_model(checkpoint.model_config)
    predictions = predict_dataset(
        model, checkpoint.params, dataset.features(), workers=workers
    )
    return predictions, checkpoint.model_config.frame_rate


def offset_sweep(
    checkpoint_dir: Path,
    offsets: Sequence[int],
    dataset: Dataset,
    train_labels: Optional[Sequence[np.ndarray]] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """mAP versus label offset, one checkpoint per offset.

    Checkpoints are read from ``<checkpoint_dir>/offset_<s>.ckpt``. With
    ``train_labels`` the table also holds ``prior_map``, the mAP of
    :func:`prior_baseline` applied to the offset-0 model's predictions.

    Raises:
        CheckpointError: If the checkpoint for some offset is missing.
    """
    for offset in offsets:
        path = checkpoint_path(checkpoint_dir, offset)
        if not path.is_file():
            raise CheckpointError(f"no checkpoint for offset {offset}: {path}")
    labels = dataset.label_matrices()
    base: Optional[List[Matrix]] = None
    if train_labels is not None:
        base_path = checkpoint_path(checkpoint_dir, 0)
        if not base_path.is_file():
            raise CheckpointError(f"no checkpoint for offset 0: {base_path}")
        base, _ = predict_with_checkpoint(base_path, dataset, workers)

    rows = []
    for offset in offsets:
        predictions, frame_rate = predict_with_checkpoint(
            checkpoint_path(checkpoint_dir, offset), dataset, workers
        )
        targets = [shift_labels(z, offset) for z in labels]
        shifted = [t for t, _ in targets]
        masks = [m for _, m in targets]
        result = mean_ap(predictions, shifted, dataset.vocabulary, masks)
        prior_value = float("nan")
        if base is not None and train_labels is not None:
            prior = prior_baseline(train_labels, base, offset)
            prior_value = mean_ap(prior, shifted, dataset.vocabulary, masks).value
        logger.info("Offset %+d: mAP %.4f", offset, result.value)
        rows.append(
            {
                "offset_frames": offset,
                "offset_seconds": offset / frame_rate,
                "map": result.value,
                "prior_map": prior_value,
            }
        )
    return pd.DataFrame(rows)

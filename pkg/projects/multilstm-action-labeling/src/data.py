"""Dense multilabel datasets: types, file formats and statistics.

On-disk layout of a dataset directory::

    <root>/annotations/<video_id>.json   one annotation document per video
    <root>/features/<video_id>.dmf       optional per-frame features

Feature files (``.dmf``) are the 4 magic bytes ``DMF1``, then ``T`` and ``D`` as
unsigned 32-bit little-endian integers, then ``T*D`` little-endian float32 values in
row-major order. They are widened to float64 on load.

Annotation documents are JSON objects::

    {"video_id": "...", "num_frames": T, "frame_rate": 10.0,
     "classes": ["name", ...], "intervals": [["name", start, end], ...]}

Intervals are end-exclusive frame ranges: ``[start, end)``.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from src.errors import ValidationError, VocabularyError
from src.numeric import Matrix

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"DMF1"
FEATURE_HEADER = struct.Struct("<4sII")
ANNOTATION_DIR = "annotations"
FEATURE_DIR = "features"


@dataclass(frozen=True)
class LabelInterval:
    class_id: int
    start: int
    end: int


@dataclass
class VideoRecord:
    video_id: str
    num_frames: int
    frame_rate: float
    intervals: List[LabelInterval] = field(default_factory=list)
    features: Optional[Matrix] = None

    def labels(self, num_classes: int) -> np.ndarray:
        return rasterize(self.intervals, self.num_frames, num_classes)


@dataclass
class Dataset:
    vocabulary: List[str]
    videos: List[VideoRecord]

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    @property
    def feature_dim(self) -> Optional[int]:
        for video in self.videos:
            if video.features is not None:
                return int(video.features.shape[1])
        return None

    def class_index(self, name: str) -> int:
        try:
            return self.vocabulary.index(name)
        except ValueError:
            raise VocabularyError(
                f"unknown class {name!r}; known classes: {', '.join(self.vocabulary)}"
            ) from None

    def label_matrices(self) -> List[np.ndarray]:
        return [video.labels(self.num_classes) for video in self.videos]

    def features(self) -> List[Matrix]:
        missing = [v.video_id for v in self.videos if v.features is None]
        if missing:
            raise ValidationError(f"videos without features: {', '.join(missing[:5])}")
        return [v.features for v in self.videos]  # type: ignore[misc]


def rasterize(
    intervals: Sequence[LabelInterval], num_frames: int, num_classes: int
) -> np.ndarray:
    """Binary ``T×C`` label matrix; overlapping intervals of a class merge.

    Raises:
        ValidationError: For an interval outside ``[0, T)`` or an unknown class id.
    """
    labels = np.zeros((num_frames, num_classes), dtype=np.uint8)
    for interval in intervals:
        if not (0 <= interval.class_id < num_classes):
            raise ValidationError(
                f"interval {interval} has class outside [0, {num_classes})"
            )
        if not (0 <= interval.start < interval.end <= num_frames):
            raise ValidationError(
                f"interval {interval} is outside a video of {num_frames} frames"
            )
        labels[interval.start : interval.end, interval.class_id] = 1
    return labels


def label_runs(column: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal runs of nonzero entries as ``(start, end)`` pairs, end-exclusive."""
    active = np.asarray(column) > 0
    padded = np.concatenate([[False], active, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e)) for s, e in zip(edges[0::2], edges[1::2])]


def intervals_from_labels(labels: np.ndarray) -> List[LabelInterval]:
    return [
        LabelInterval(class_id=c, start=s, end=e)
        for c in range(labels.shape[1])
        for s, e in label_runs(labels[:, c])
    ]


def write_features(path: Path, features: Matrix) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValidationError(f"features must be T×D, got shape {features.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FEATURE_HEADER.pack(FEATURE_MAGIC, features.shape[0], features.shape[1])
    path.write_bytes(header + features.astype("<f4").tobytes(order="C"))


def read_features(path: Path) -> Matrix:
    """Load a ``.dmf`` feature file as float64.

    Raises:
        ValidationError: On a bad magic number or a size mismatch; names the path.
    """
    blob = Path(path).read_bytes()
    if len(blob) < FEATURE_HEADER.size:
        raise ValidationError(f"{path}: truncated feature header")
    magic, n_frames, dim = FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise ValidationError(
            f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}"
        )
    expected = FEATURE_HEADER.size + 4 * n_frames * dim
    if len(blob) != expected:
        raise ValidationError(
            f"{path}: {len(blob)} bytes, expected {expected} for {n_frames}×{dim}"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=FEATURE_HEADER.size)
    return values.reshape(n_frames, dim).astype(np.float64)


class AnnotationDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    video_id: str = Field(..., min_length=1)
    num_frames: int = Field(..., ge=1)
    frame_rate: float = Field(..., gt=0)
    classes: List[str]
    intervals: List[Tuple[str, int, int]] = Field(default_factory=list)


def write_annotation(path: Path, video: VideoRecord, vocabulary: Sequence[str]) -> None:
    doc = AnnotationDocument(
        video_id=video.video_id,
        num_frames=video.num_frames,
        frame_rate=video.frame_rate,
        classes=list(vocabulary),
        intervals=[(vocabulary[i.class_id], i.start, i.end) for i in video.intervals],
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc.model_dump(), indent=1) + "\n", encoding="utf-8")


def read_annotation(path: Path) -> Tuple[VideoRecord, List[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
        doc = AnnotationDocument.model_validate_json(text)
    except PydanticValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    index = {name: i for i, name in enumerate(doc.classes)}
    intervals = []
    for name, start, end in doc.intervals:
        if name not in index:
            raise ValidationError(
                f"{path}: interval ({name}, {start}, {end}) uses an unknown class"
            )
        intervals.append(LabelInterval(class_id=index[name], start=start, end=end))
    video = VideoRecord(
        video_id=doc.video_id,
        num_frames=doc.num_frames,
        frame_rate=doc.frame_rate,
        intervals=intervals,
    )
    try:
        rasterize(intervals, video.num_frames, len(doc.classes))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return video, list(doc.classes)


def save_dataset(dataset: Dataset, root: Path) -> None:
    root = Path(root)
    for video in dataset.videos:
        annotation = root / ANNOTATION_DIR / f"{video.video_id}.json"
        write_annotation(annotation, video, dataset.vocabulary)
        if video.features is not None:
            write_features(root / FEATURE_DIR / f"{video.video_id}.dmf", video.features)
    logger.info("Wrote %d videos to %s", len(dataset.videos), root)


def load_dataset(root: Path, require_features: bool = False) -> Dataset:
    """Load every annotated video under ``root`` (sorted by file name).

    Raises:
        ValidationError: If the directory is empty, vocabularies disagree, features
            are missing when required, or feature rows do not match ``T``.
    """
    root = Path(root)
    paths = sorted((root / ANNOTATION_DIR).glob("*.json"))
    if not paths:
        raise ValidationError(f"no annotation files under {root / ANNOTATION_DIR}")
    vocabulary: Optional[List[str]] = None
    videos = []
    for path in paths:
        video, classes = read_annotation(path)
        if vocabulary is None:
            vocabulary = classes
        elif classes != vocabulary:
            raise ValidationError(
                f"{path}: class vocabulary differs from {paths[0].name}"
            )
        feature_path = root / FEATURE_DIR / f"{video.video_id}.dmf"
        if feature_path.is_file():
            video.features = read_features(feature_path)
            if video.features.shape[0] != video.num_frames:
                raise ValidationError(
                    f"{feature_path}: {video.features.shape[0]} feature rows for "
                    f"{video.num_frames} frames"
                )
        elif require_features:
            raise ValidationError(f"missing feature file {feature_path}")
        videos.append(video)
    return Dataset(vocabulary=vocabulary or [], videos=videos)


@dataclass
class StatsReport:
    summary: Dict[str, float]
    labels_per_frame: pd.DataFrame
    classes_per_video: pd.DataFrame
    per_class: pd.DataFrame

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(
            {"statistic": list(self.summary), "value": list(self.summary.values())}
        ).to_csv(out_dir / "summary.csv", index=False, float_format="%.6f")
        self.labels_per_frame.to_csv(out_dir / "labels_per_frame.csv", index=False)
        self.classes_per_video.to_csv(out_dir / "classes_per_video.csv", index=False)
        self.per_class.to_csv(
            out_dir / "per_class.csv", index=False, float_format="%.6f"
        )


def _histogram(values: np.ndarray, key: str, count: str) -> pd.DataFrame:
    values = np.asarray(values, dtype=np.int64)
    top = int(values.max()) if values.size else 0
    counts = np.bincount(values, minlength=top + 1)
    return pd.DataFrame({key: np.arange(top + 1), count: counts})


def dataset_stats(dataset: Dataset) -> StatsReport:
    """Label-density histograms and per-class instance/duration tables."""
    n_classes = dataset.num_classes
    labels_per_frame = []
    classes_per_video = []
    instances = np.zeros(n_classes, dtype=np.int64)
    frames = np.zeros(n_classes, dtype=np.int64)
    seconds = np.zeros(n_classes)
    for video in dataset.videos:
        labels = video.labels(n_classes)
        labels_per_frame.append(labels.sum(axis=1))
        classes_per_video.append(int(np.count_nonzero(labels.any(axis=0))))
        for c in range(n_classes):
            runs = label_runs(labels[:, c])
            instances[c] += len(runs)
            covered = sum(e - s for s, e in runs)
            frames[c] += covered
            seconds[c] += covered / video.frame_rate
    per_frame = np.concatenate(labels_per_frame) if labels_per_frame else np.zeros(0)
    per_video = np.asarray(classes_per_video)
    mean_length = np.divide(
        frames, instances, out=np.zeros(n_classes), where=instances > 0
    )
    summary = {
        "videos": float(len(dataset.videos)),
        "frames": float(per_frame.size),
        "mean_labels_per_frame": float(per_frame.mean()) if per_frame.size else 0.0,
        "max_labels_per_frame": float(per_frame.max()) if per_frame.size else 0.0,
        "mean_classes_per_video": float(per_video.mean()) if per_video.size else 0.0,
        "max_classes_per_video": float(per_video.max()) if per_video.size else 0.0,
    }
    per_class = pd.DataFrame(
        {
            "class": dataset.vocabulary,
            "instances": instances,
            "frames": frames,
            "seconds": seconds,
            "mean_instance_frames": mean_length,
        }
    )
    return StatsReport(
        summary=summary,
        labels_per_frame=_histogram(per_frame, "labels", "frames"),
        classes_per_video=_histogram(per_video, "classes", "videos"),
        per_class=per_class,
    )

"""Synthetic dense-label datasets with planted temporal structure.

A video is built from non-overlapping event blocks separated by random gaps. Each block
realises one rule:

* the trigger class is active for a sampled duration, together with its partners;
* if the rule has a consequence, that class starts exactly ``lag`` frames after the
  trigger starts, together with its own partners;
* hierarchy parents are active wherever any of their children is.

Features are the sum of the embeddings of all active classes plus isotropic Gaussian
noise.
"""

import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from src.data import (
    Dataset,
    LabelInterval,
    VideoRecord,
    intervals_from_labels,
    label_runs,
)
from src.errors import ConfigurationError, GenerationError
from src.numeric import Matrix

logger = logging.getLogger(__name__)


class IntRange(BaseModel):
    """Inclusive integer range, sampled uniformly."""

    model_config = ConfigDict(extra="forbid")

    low: int = Field(..., ge=0)
    high: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> "IntRange":
        if self.high < self.low:
            raise ValueError(f"range [{self.low}, {self.high}] is empty")
        return self

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high + 1))


def _fixed(value: int) -> IntRange:
    return IntRange(low=value, high=value)


class EventRule(BaseModel):
    """One kind of event block."""

    model_config = ConfigDict(extra="forbid")

    trigger: str
    duration: IntRange = Field(default_factory=lambda: IntRange(low=5, high=10))
    partners: List[str] = Field(default_factory=list)
    consequence: Optional[str] = None
    lag: IntRange = Field(default_factory=lambda: _fixed(1))
    consequence_duration: IntRange = Field(
        default_factory=lambda: IntRange(low=5, high=10)
    )
    consequence_partners: List[str] = Field(default_factory=list)
    weight: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _positive_lengths(self) -> "EventRule":
        if self.duration.low < 1 or self.consequence_duration.low < 1:
            raise ValueError(
                f"rule {self.trigger!r}: durations must be at least 1 frame"
            )
        if self.lag.low < 1:
            raise ValueError(f"rule {self.trigger!r}: lag must be at least 1 frame")
        if self.consequence is None and self.consequence_partners:
            raise ValueError(
                f"rule {self.trigger!r}: consequence partners without a consequence"
            )
        return self

    def roles(self) -> List[str]:
        names = [self.trigger, *self.partners, *self.consequence_partners]
        if self.consequence is not None:
            names.append(self.consequence)
        return names

    def shortest_block(self) -> int:
        length = self.duration.low
        if self.consequence is not None:
            length = max(length, self.lag.low + self.consequence_duration.low)
        return length


class SynthSpec(BaseModel):
    """Everything that defines a synthetic dataset except the seed."""

    model_config = ConfigDict(extra="forbid")

    classes: List[str] = Field(..., min_length=1)
    feature_dim: int = Field(..., ge=1)
    rules: List[EventRule] = Field(..., min_length=1)
    hierarchy: Dict[str, List[str]] = Field(default_factory=dict)
    noise: float = Field(0.5, ge=0)
    videos: int = Field(20, ge=0, description="training videos")
    test_videos: int = Field(0, ge=0)
    frames_per_video: int = Field(300, ge=1)
    frame_rate: float = Field(10.0, gt=0)
    gap: IntRange = Field(default_factory=lambda: IntRange(low=5, high=30))
    orthonormal_embeddings: bool = True
    embedding_scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _consistent(self) -> "SynthSpec":
        known = set(self.classes)
        if len(known) != len(self.classes):
            raise ValueError("class names must be unique")
        seen: Dict[str, int] = {}
        for index, rule in enumerate(self.rules):
            for name in rule.roles():
                if name not in known:
                    raise ValueError(f"rule {index} uses unknown class {name!r}")
                if name in seen:
                    raise ValueError(
                        f"class {name!r} plays more than one role (rules {seen[name]} "
                        f"and {index})"
                    )
                seen[name] = index
        for parent, children in self.hierarchy.items():
            if parent not in known or any(child not in known for child in children):
                raise ValueError(f"hierarchy entry {parent!r} uses an unknown class")
            if parent in seen:
                raise ValueError(f"hierarchy parent {parent!r} is also used by a rule")
            if any(child in self.hierarchy for child in children):
                raise ValueError(f"hierarchy under {parent!r} is nested")
            if not children:
                raise ValueError(f"hierarchy parent {parent!r} has no children")
        if self.gap.low < 1:
            raise ValueError("gap between events must be at least 1 frame")
        if self.orthonormal_embeddings and len(self.classes) > self.feature_dim:
            raise ValueError(
                f"{len(self.classes)} orthonormal embeddings need feature_dim >= "
                f"{len(self.classes)}"
            )
        return self

    def class_ids(self) -> Dict[str, int]:
        return {name: i for i, name in enumerate(self.classes)}


def load_synth_spec(path: Path) -> SynthSpec:
    try:
        return SynthSpec.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except PydanticValidationError as exc:
        raise ConfigurationError(
            f"{path}: invalid synthetic dataset spec: {exc}"
        ) from exc


class SyntheticData(NamedTuple):
    train: Dataset
    test: Dataset
    embeddings: Matrix


def class_embeddings(spec: SynthSpec, rng: np.random.Generator) -> Matrix:
    """One ``D``-vector per class, orthonormal rows when requested."""
    n_classes, dim = len(spec.classes), spec.feature_dim
    draws = rng.standard_normal((dim, n_classes))
    if spec.orthonormal_embeddings:
        q, _ = np.linalg.qr(draws)
        return spec.embedding_scale * q.T[:n_classes]
    return spec.embedding_scale * draws.T / np.sqrt(dim)


def _place_block(
    rule: EventRule, ids: Dict[str, int], start: int, rng: np.random.Generator
) -> Tuple[List[LabelInterval], int]:
    duration = rule.duration.sample(rng)
    end = start + duration
    intervals = [
        LabelInterval(ids[name], start, end) for name in [rule.trigger, *rule.partners]
    ]
    if rule.consequence is not None:
        c_start = start + rule.lag.sample(rng)
        c_end = c_start + rule.consequence_duration.sample(rng)
        intervals.extend(
            LabelInterval(ids[name], c_start, c_end)
            for name in [rule.consequence, *rule.consequence_partners]
        )
        end = max(end, c_end)
    return intervals, end


def _video_labels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    ids = spec.class_ids()
    weights = np.array([rule.weight for rule in spec.rules])
    weights = weights / weights.sum()
    n_frames = spec.frames_per_video
    labels = np.zeros((n_frames, len(spec.classes)), dtype=np.uint8)
    t = spec.gap.sample(rng)
    while t < n_frames:
        rule = spec.rules[int(rng.choice(len(spec.rules), p=weights))]
        intervals, end = _place_block(rule, ids, t, rng)
        if end > n_frames:
            break
        for interval in intervals:
            labels[interval.start : interval.end, interval.class_id] = 1
        t = end + spec.gap.sample(rng)
    for parent, children in spec.hierarchy.items():
        child_ids = [ids[child] for child in children]
        labels[:, ids[parent]] = labels[:, child_ids].any(axis=1)
    return labels


def _make_videos(
    spec: SynthSpec,
    embeddings: Matrix,
    count: int,
    prefix: str,
    rng: np.random.Generator,
) -> List[VideoRecord]:
    videos = []
    for index in range(count):
        labels = _video_labels(spec, rng)
        clean = labels.astype(np.float64) @ embeddings
        noise = rng.standard_normal(clean.shape) if spec.noise > 0 else 0.0
        videos.append(
            VideoRecord(
                video_id=f"{prefix}_{index:04d}",
                num_frames=spec.frames_per_video,
                frame_rate=spec.frame_rate,
                intervals=intervals_from_labels(labels),
                features=clean + spec.noise * noise,
            )
        )
    return videos


def synth_generate(spec: SynthSpec, rng: np.random.Generator) -> SyntheticData:
    """Generate training and test videos from ``spec``.

    Embeddings are drawn first, then the training videos, then the test videos, all
    from ``rng``; the same generator state always yields the same data.

    Raises:
        GenerationError: If some rule's shortest block does not fit in a video.
    """
    for rule in spec.rules:
        if rule.shortest_block() > spec.frames_per_video:
            raise GenerationError(
                f"rule {rule.trigger!r} needs at least {rule.shortest_block()} frames; "
                f"videos have {spec.frames_per_video}"
            )
    embeddings = class_embeddings(spec, rng)
    train = _make_videos(spec, embeddings, spec.videos, "train", rng)
    test = _make_videos(spec, embeddings, spec.test_videos, "test", rng)
    logger.info(
        "Generated %d training and %d test videos of %d frames",
        len(train),
        len(test),
        spec.frames_per_video,
    )
    return SyntheticData(
        train=Dataset(vocabulary=list(spec.classes), videos=train),
        test=Dataset(vocabulary=list(spec.classes), videos=test),
        embeddings=embeddings,
    )


def audit_rules(dataset: Dataset, spec: SynthSpec) -> List[str]:
    """Scan annotations for violations of the planted rules.

    Checks that every trigger instance is followed by a consequence instance starting
    within the lag range, that partners cover every frame of the class they accompany,
    and that hierarchy parents equal the union of their children.

    Returns:
        Human-readable violations; empty when every rule holds.
    """
    violations: List[str] = []
    for video in dataset.videos:
        vid = video.video_id
        labels = video.labels(dataset.num_classes)
        column = {
            name: labels[:, dataset.class_index(name)] for name in dataset.vocabulary
        }
        for rule in spec.rules:
            if rule.consequence is not None:
                starts = {s for s, _ in label_runs(column[rule.consequence])}
                lags = range(rule.lag.low, rule.lag.high + 1)
                for start, _ in label_runs(column[rule.trigger]):
                    if not any(start + lag in starts for lag in lags):
                        violations.append(
                            f"{vid}: {rule.trigger} at {start} has no "
                            f"{rule.consequence} within lag "
                            f"{rule.lag.low}-{rule.lag.high}"
                        )
                for partner in rule.consequence_partners:
                    violations.extend(
                        _uncovered(vid, column, rule.consequence, partner)
                    )
            for partner in rule.partners:
                violations.extend(_uncovered(vid, column, rule.trigger, partner))
        for parent, children in spec.hierarchy.items():
            union = np.any([column[child] > 0 for child in children], axis=0)
            mismatch = np.flatnonzero(union != (column[parent] > 0))
            if mismatch.size:
                violations.append(
                    f"{vid}: {parent} differs from the union of its children "
                    f"at {mismatch.size} frames (first {int(mismatch[0])})"
                )
    return violations


def _uncovered(
    video_id: str, column: Dict[str, np.ndarray], base: str, partner: str
) -> List[str]:
    missing = np.flatnonzero((column[base] > 0) & (column[partner] == 0))
    if not missing.size:
        return []
    return [
        f"{video_id}: {partner} missing on {missing.size} {base} frames "
        f"(first {int(missing[0])})"
    ]


def reference_synth_spec(
    videos: int = 200, test_videos: int = 50, frames_per_video: int = 300
) -> SynthSpec:
    """The eight-class benchmark dataset.

    ``windup`` is followed by ``throw`` exactly 5 frames after it starts, with
    ``guard`` accompanying every throw; ``dribble`` co-occurs with ``run``; ``jump`` is
    followed by ``fall`` 2-4 frames later; ``ballplay`` is the parent of ``throw`` and
    ``dribble``.
    """
    return SynthSpec(
        classes=[
            "windup",
            "throw",
            "guard",
            "dribble",
            "run",
            "jump",
            "fall",
            "ballplay",
        ],
        feature_dim=32,
        rules=[
            EventRule(
                trigger="windup",
                duration=IntRange(low=4, high=6),
                consequence="throw",
                lag=_fixed(5),
                consequence_duration=IntRange(low=6, high=9),
                consequence_partners=["guard"],
            ),
            EventRule(
                trigger="dribble",
                duration=IntRange(low=10, high=30),
                partners=["run"],
            ),
            EventRule(
                trigger="jump",
                duration=IntRange(low=3, high=5),
                consequence="fall",
                lag=IntRange(low=2, high=4),
                consequence_duration=IntRange(low=3, high=6),
            ),
        ],
        hierarchy={"ballplay": ["throw", "dribble"]},
        noise=0.6,
        videos=videos,
        test_videos=test_videos,
        frames_per_video=frames_per_video,
        frame_rate=10.0,
        gap=IntRange(low=5, high=30),
    )

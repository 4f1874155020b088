"""Shared fixtures for the test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path so `src` imports work
PROJECT_ROOT = Path(__file__).parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.config import ModelConfig  # noqa: E402
from src.data import Dataset, LabelInterval, VideoRecord  # noqa: E402
from src.numeric import make_rng  # noqa: E402
from src.synth import EventRule, IntRange, SynthSpec, synth_generate  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(0)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Two short videos, three classes, random features."""
    gen = make_rng(3)
    videos = [
        VideoRecord(
            video_id="v0",
            num_frames=12,
            frame_rate=10.0,
            intervals=[LabelInterval(0, 2, 6), LabelInterval(1, 4, 9)],
            features=gen.standard_normal((12, 5)),
        ),
        VideoRecord(
            video_id="v1",
            num_frames=9,
            frame_rate=10.0,
            intervals=[LabelInterval(2, 0, 3), LabelInterval(0, 5, 9)],
            features=gen.standard_normal((9, 5)),
        ),
    ]
    return Dataset(vocabulary=["a", "b", "c"], videos=videos)


def small_spec(**overrides) -> SynthSpec:
    """Four classes: ``a`` then ``b`` three frames later, ``c`` always with ``d``."""
    values = dict(
        classes=["a", "b", "c", "d"],
        feature_dim=8,
        rules=[
            EventRule(
                trigger="a",
                duration=IntRange(low=3, high=5),
                consequence="b",
                lag=IntRange(low=3, high=3),
                consequence_duration=IntRange(low=3, high=5),
            ),
            EventRule(trigger="c", duration=IntRange(low=4, high=8), partners=["d"]),
        ],
        noise=0.1,
        videos=4,
        test_videos=2,
        frames_per_video=80,
        gap=IntRange(low=3, high=8),
    )
    values.update(overrides)
    return SynthSpec(**values)


@pytest.fixture
def synth_spec() -> SynthSpec:
    return small_spec()


@pytest.fixture
def synth_data(synth_spec):
    return synth_generate(synth_spec, make_rng(11))


@pytest.fixture
def multilstm_config() -> ModelConfig:
    return ModelConfig(
        architecture="multilstm",
        input_dim=5,
        num_classes=3,
        hidden=6,
        attention_units=4,
        window=3,
        output_window=2,
    )


@pytest.fixture
def spec_factory():
    return small_spec

"""Desk-scale experiments on the synthetic benchmark dataset.

``run_ordering_experiment`` trains the single-frame baseline, the plain LSTM and the
MultiLSTM (optionally its ablations) on the same data and reports test frame mAP.
``run_offset_experiment`` trains models on shifted labels and measures how well each
anticipates an event from frames where it is not yet visible.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.checkpoint import Checkpoint
from src.config import ModelConfig, TrainConfig
from src.evaluation import (
    average_precision,
    conditional_label_table,
    mean_ap,
    pre_event_mask,
)
from src.models import build_model, predict_dataset
from src.multilstm import shift_labels
from src.synth import SyntheticData
from src.training import train

logger = logging.getLogger(__name__)


class ExperimentSettings(BaseModel):
    """Model and optimiser sizes small enough for one CPU core.

    The defaults are the ``benchmark`` settings. Events in the reference dataset last
    3 to 30 frames, so the input and output windows span 5 frames rather than the
    published 15.
    """

    model_config = ConfigDict(extra="forbid")

    hidden: int = Field(64, ge=1)
    attention_units: int = Field(16, ge=1)
    window: int = Field(5, ge=1)
    epochs: int = Field(12, ge=1)
    minibatch: int = Field(32, ge=1)
    learning_rate: float = Field(2e-3, gt=0)
    seed: int = 0
    workers: int = Field(1, ge=1)

    def model(self, data: SyntheticData, architecture: str, **overrides) -> ModelConfig:
        values = dict(
            architecture=architecture,
            input_dim=data.train.feature_dim,
            num_classes=data.train.num_classes,
            hidden=self.hidden,
            attention_units=self.attention_units,
            window=self.window,
        )
        values.update(overrides)
        return ModelConfig(**values)

    def training(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            minibatch=self.minibatch,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )


VARIANTS: Dict[str, Dict[str, object]] = {
    "frame": {"architecture": "frame"},
    "lstm": {"architecture": "lstm"},
    "multilstm": {"architecture": "multilstm"},
    "multilstm-no-attention": {"architecture": "multilstm", "attention": False},
    "multilstm-single-output": {"architecture": "multilstm", "output_window": 1},
}


def train_variant(
    data: SyntheticData, settings: ExperimentSettings, **model_values
) -> Checkpoint:
    config = settings.model(data, **model_values)
    result = train(build_model(config), data.train, settings.training())
    return result.checkpoint


def predict_test_split(
    data: SyntheticData, checkpoint: Checkpoint, workers: int = 1
) -> List[np.ndarray]:
    model = build_model(checkpoint.model_config)
    features = data.test.features()
    return predict_dataset(model, checkpoint.params, features, workers=workers)


def run_ordering_experiment(
    data: SyntheticData,
    settings: Optional[ExperimentSettings] = None,
    variants: Sequence[str] = ("frame", "lstm", "multilstm"),
) -> pd.DataFrame:
    """Test frame mAP for each variant, in the given order."""
    settings = settings or ExperimentSettings()
    labels = data.test.label_matrices()
    rows = []
    for name in variants:
        checkpoint = train_variant(data, settings, **VARIANTS[name])
        predictions = predict_test_split(data, checkpoint, settings.workers)
        value = mean_ap(predictions, labels, data.test.vocabulary).value
        logger.info("%s: test mAP %.4f", name, value)
        rows.append({"variant": name, "map": value})
    return pd.DataFrame(rows)


class OffsetExperiment(NamedTuple):
    table: pd.DataFrame
    prior: float


def run_offset_experiment(
    data: SyntheticData,
    settings: Optional[ExperimentSettings] = None,
    offsets: Sequence[int] = (5, 10),
    cause: str = "windup",
    effect: str = "throw",
) -> OffsetExperiment:
    """Anticipation of ``effect`` by MultiLSTMs trained at each offset.

    For every offset ``s`` the table holds the AP for ``effect`` over test frames where
    it is not yet active. ``prior`` is ``P(effect at t + s0 | cause at t)`` from the
    training labels, with ``s0`` the first offset.
    """
    settings = settings or ExperimentSettings()
    effect_id = data.train.class_index(effect)
    cause_id = data.train.class_index(cause)
    labels = data.test.label_matrices()
    rows = []
    for offset in offsets:
        checkpoint = train_variant(
            data, settings, architecture="multilstm", offset=offset
        )
        predictions = predict_test_split(data, checkpoint, settings.workers)
        scores = np.concatenate([p[:, effect_id] for p in predictions])
        targets = np.concatenate(
            [shift_labels(z, offset)[0][:, effect_id] for z in labels]
        )
        mask = np.concatenate([pre_event_mask(z, effect_id, offset) for z in labels])
        value = average_precision(scores, targets, mask)
        logger.info("Offset %+d: %s AP before onset %.4f", offset, effect, value)
        rows.append({"offset_frames": offset, "pre_event_ap": value})
    table = conditional_label_table(data.train.label_matrices(), offsets[0])
    prior = float(table[cause_id, effect_id])
    return OffsetExperiment(table=pd.DataFrame(rows), prior=prior)

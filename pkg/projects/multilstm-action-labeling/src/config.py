"""Typed configuration and run-config resolution.

Key-value config files use the dotenv format (``KEY=value`` per line, ``#`` comments)
and are read with ``python-dotenv``. Resolution order, lowest to highest precedence:

1. defaults declared on the models below,
2. ``MULTILSTM_<KEY>`` environment variables (a ``.env`` in the working directory is
   loaded first),
3. the file passed with ``--config``,
4. flags given explicitly on the command line.

Every run writes the resolved values to ``run_config.env``; feeding that file back with
``--config`` reproduces the run.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.errors import ConfigurationError
from src.multilstm import MultiLstmConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "MULTILSTM_"
RESOLVED_CONFIG_NAME = "run_config.env"

Architecture = Literal["frame", "lstm", "multilstm"]


class ModelConfig(MultiLstmConfig):
    """Architecture choice plus the data dimensions it is built for."""

    architecture: Architecture = "multilstm"
    input_dim: int = Field(..., ge=1)
    num_classes: int = Field(..., ge=1)

    @property
    def n_outputs(self) -> int:
        if self.architecture != "multilstm":
            return 1
        return super().n_outputs


class TrainConfig(BaseModel):
    """Optimiser and streaming settings (RMSProp with global-norm clipping)."""

    model_config = ConfigDict(extra="forbid")

    minibatch: int = Field(32, ge=1, description="frames per minibatch")
    epochs: int = Field(1, ge=0)
    seed: int = 0
    learning_rate: float = Field(1e-3, gt=0)
    decay: float = Field(0.95, ge=0, lt=1)
    epsilon: float = Field(1e-8, ge=0)
    clip: float = Field(5.0, gt=0, description="global gradient-norm threshold")
    shuffle: bool = True


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threshold: float = Field(0.1, ge=0, le=1, description="detection threshold lambda")
    length_penalty: float = Field(0.01, ge=0, description="detection alpha")
    overlap: float = Field(0.1, gt=0, le=1, description="temporal IoU threshold")


def _default(model: type, name: str) -> Any:
    return model.model_fields[name].default


class RunConfig(BaseModel):
    """Every knob of a CLI run, flat so it maps one-to-one onto flags and files."""

    model_config = ConfigDict(extra="forbid")

    out: str = "runs/latest"
    data: Optional[str] = None
    train_data: Optional[str] = None
    checkpoint: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    spec: Optional[str] = None
    seed: int = 0
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"
    oracle: bool = False

    architecture: Architecture = "multilstm"
    hidden: int = Field(_default(MultiLstmConfig, "hidden"), ge=1)
    attention_units: int = Field(_default(MultiLstmConfig, "attention_units"), ge=1)
    window: int = Field(_default(MultiLstmConfig, "window"), ge=1)
    output_window: Optional[int] = Field(None, ge=1)
    offset: int = 0
    attention: bool = True
    frame_rate: float = Field(_default(MultiLstmConfig, "frame_rate"), gt=0)

    learning_rate: float = Field(_default(TrainConfig, "learning_rate"), gt=0)
    decay: float = Field(_default(TrainConfig, "decay"), ge=0, lt=1)
    epsilon: float = Field(_default(TrainConfig, "epsilon"), ge=0)
    clip: float = Field(_default(TrainConfig, "clip"), gt=0)
    minibatch: int = Field(_default(TrainConfig, "minibatch"), ge=1)
    epochs: int = Field(_default(TrainConfig, "epochs"), ge=0)
    shuffle: bool = _default(TrainConfig, "shuffle")

    threshold: float = Field(_default(EvalConfig, "threshold"), ge=0, le=1)
    length_penalty: float = Field(_default(EvalConfig, "length_penalty"), ge=0)
    overlap: float = Field(_default(EvalConfig, "overlap"), gt=0, le=1)

    offsets: List[int] = Field(default_factory=lambda: [-10, -5, 0, 5, 10])
    mode: Literal["sequential", "cooccurring"] = "sequential"
    first: Optional[str] = None
    second: Optional[str] = None
    max_gap: int = Field(10, ge=0)
    top_k: int = Field(10, ge=1)
    suppress: bool = True

    @field_validator("offsets", mode="before")
    @classmethod
    def _split_offsets(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    def model_settings(self, input_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            architecture=self.architecture,
            input_dim=input_dim,
            num_classes=num_classes,
            window=self.window,
            output_window=self.output_window,
            hidden=self.hidden,
            attention_units=self.attention_units,
            offset=self.offset,
            frame_rate=self.frame_rate,
            attention=self.attention,
        )

    def train_settings(self) -> TrainConfig:
        return TrainConfig(
            minibatch=self.minibatch,
            epochs=self.epochs,
            seed=self.seed,
            learning_rate=self.learning_rate,
            decay=self.decay,
            epsilon=self.epsilon,
            clip=self.clip,
            shuffle=self.shuffle,
        )

    def eval_settings(self) -> EvalConfig:
        return EvalConfig(
            threshold=self.threshold,
            length_penalty=self.length_penalty,
            overlap=self.overlap,
        )


def _normalise_keys(values: Mapping[str, Optional[str]]) -> Dict[str, str]:
    known = set(RunConfig.model_fields)
    out: Dict[str, str] = {}
    for raw_key, value in values.items():
        key = raw_key.strip().lower().replace("-", "_")
        if value is None:
            continue
        if key not in known:
            raise ConfigurationError(f"unknown configuration key {raw_key!r}")
        out[key] = value
    return out


def load_config_file(path: Path) -> Dict[str, str]:
    """Read a dotenv-style key-value config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return _normalise_keys(dotenv_values(path))


def environment_overrides(
    environ: Optional[Mapping[str, str]] = None
) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    picked = {
        key[len(ENV_PREFIX) :]: value
        for key, value in environ.items()
        if key.startswith(ENV_PREFIX)
    }
    return _normalise_keys(picked)


def resolve_run_config(
    cli_values: Mapping[str, Any],
    config_path: Optional[Path] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge environment, config file and explicit CLI values into a RunConfig."""
    merged: Dict[str, Any] = {}
    merged.update(environment_overrides(environ))
    if config_path is not None:
        merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    try:
        return RunConfig(**merged)
    except ValueError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def write_resolved_config(config: RunConfig, out_dir: Path) -> Path:
    """Write ``run_config.env`` (sorted keys; unset values and ``out`` omitted).

    The output directory is left out so two runs that differ only in where they
    write produce identical trees.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# resolved run configuration"]
    for key, value in sorted(config.model_dump().items()):
        if value is None or key == "out":
            continue
        lines.append(f"{key.upper()}={_format_value(value)}")
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path

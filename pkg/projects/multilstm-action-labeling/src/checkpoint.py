"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"MLCK"                 format id
    uint32                  format version
    uint32                  header length in bytes
    header                  UTF-8 JSON: model config, train config, epoch, seed,
                            parameter manifest [[name, shape], ...], has_optimizer
    float64[...]            parameters in manifest order
    float64[...]            RMSProp cache in the same order (only if has_optimizer)

The manifest follows ``ParameterGroup.named_arrays`` order, so loading rebuilds an
empty parameter set from the model config and fills it with ``assign_flat``.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from src.config import ModelConfig, TrainConfig
from src.errors import CheckpointError, ConfigurationError, ShapeError
from src.models import build_model
from src.params import ParameterGroup

logger = logging.getLogger(__name__)

MAGIC = b"MLCK"
VERSION = 1
PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: ParameterGroup
    optimizer_cache: Optional[ParameterGroup] = None
    epoch: int = 0
    seed: int = 0

    def same_as(self, other: "Checkpoint") -> bool:
        """Exact equality of configs, counters and every stored float."""
        if (
            self.model_config != other.model_config
            or self.train_config != other.train_config
            or self.epoch != other.epoch
            or self.seed != other.seed
            or self.params.shapes() != other.params.shapes()
        ):
            return False
        if not np.array_equal(self.params.flatten(), other.params.flatten()):
            return False
        if (self.optimizer_cache is None) != (other.optimizer_cache is None):
            return False
        if self.optimizer_cache is None:
            return True
        return np.array_equal(
            self.optimizer_cache.flatten(), other.optimizer_cache.flatten()
        )


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = Path(path)
    shapes = checkpoint.params.shapes()
    manifest = [[name, list(shape)] for name, shape in shapes.items()]
    header = {
        "model_config": checkpoint.model_config.model_dump(mode="json"),
        "train_config": checkpoint.train_config.model_dump(mode="json"),
        "epoch": checkpoint.epoch,
        "seed": checkpoint.seed,
        "parameters": manifest,
        "has_optimizer": checkpoint.optimizer_cache is not None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blobs = [
        PREFIX.pack(MAGIC, VERSION, len(header_bytes)),
        header_bytes,
        checkpoint.params.flatten().astype("<f8").tobytes(),
    ]
    if checkpoint.optimizer_cache is not None:
        checkpoint.params.require_same_shapes(
            checkpoint.optimizer_cache, "optimizer cache"
        )
        blobs.append(checkpoint.optimizer_cache.flatten().astype("<f8").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(blobs))
    logger.info("Saved checkpoint (epoch %d) to %s", checkpoint.epoch, path)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: If the file is missing, truncated, of another format or
            version, or its manifest does not match the architecture in its header.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, header_len = PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    body_start = PREFIX.size + header_len
    try:
        header = json.loads(blob[PREFIX.size : body_start].decode("utf-8"))
        model_config = ModelConfig.model_validate(header["model_config"])
        train_config = TrainConfig.model_validate(header["train_config"])
    except (ValueError, KeyError, PydanticValidationError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc

    try:
        model = build_model(model_config)
    except ConfigurationError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    params = model.template()
    manifest = {name: tuple(shape) for name, shape in header.get("parameters", [])}
    if manifest != params.shapes():
        raise CheckpointError(
            f"{path}: parameter manifest does not match the model config"
        )

    values = np.frombuffer(blob, dtype="<f8", offset=body_start)
    n = params.size
    has_optimizer = bool(header.get("has_optimizer", False))
    expected = 2 * n if has_optimizer else n
    if values.size != expected:
        raise CheckpointError(
            f"{path}: {values.size} stored values, expected {expected}"
        )
    try:
        params.assign_flat(values[:n])
        cache = None
        if has_optimizer:
            cache = params.zeros_like()
            cache.assign_flat(values[n:])
    except ShapeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return Checkpoint(
        model_config=model_config,
        train_config=train_config,
        params=params,
        optimizer_cache=cache,
        epoch=int(header.get("epoch", 0)),
        seed=int(header.get("seed", 0)),
    )

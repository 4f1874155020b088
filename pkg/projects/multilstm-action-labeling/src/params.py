"""Named, ordered collections of learnable arrays.

Every parameter set (and every gradient, and every optimizer cache) is a dataclass
deriving from :class:`ParameterGroup`. Fields are float64 arrays, nested groups,
lists of arrays, or ``None`` for an absent optional group. The field order defines the
fixed order used by flattening, gradient checks and the checkpoint format.
"""

import dataclasses
from collections import OrderedDict
from typing import Callable, Dict, TypeVar

import numpy as np

from src.errors import ShapeError
from src.numeric import Matrix, Vector

G = TypeVar("G", bound="ParameterGroup")


class ParameterGroup:
    """Mixin for dataclasses holding parameter arrays."""

    def named_arrays(self, prefix: str = "") -> "OrderedDict[str, Matrix]":
        """All arrays keyed by dotted name, in declaration order."""
        out: "OrderedDict[str, Matrix]" = OrderedDict()
        for field in dataclasses.fields(self):  # type: ignore[arg-type]
            if not field.metadata.get("param", True):
                continue
            value = getattr(self, field.name)
            name = f"{prefix}{field.name}"
            if value is None:
                continue
            if isinstance(value, ParameterGroup):
                out.update(value.named_arrays(prefix=f"{name}."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    out[f"{name}.{i}"] = item
            else:
                out[name] = value
        return out

    def map(self: G, fn: Callable[[Matrix], Matrix]) -> G:
        """New group of the same type with ``fn`` applied to every array."""
        changes = {}
        for field in dataclasses.fields(self):  # type: ignore[arg-type]
            value = getattr(self, field.name)
            if not field.metadata.get("param", True) or value is None:
                continue
            if isinstance(value, ParameterGroup):
                changes[field.name] = value.map(fn)
            elif isinstance(value, list):
                changes[field.name] = [fn(item) for item in value]
            else:
                changes[field.name] = fn(value)
        return dataclasses.replace(self, **changes)  # type: ignore[type-var]

    def zeros_like(self: G) -> G:
        return self.map(np.zeros_like)

    def copy(self: G) -> G:
        return self.map(np.copy)

    def shapes(self) -> Dict[str, tuple]:
        return {name: array.shape for name, array in self.named_arrays().items()}

    @property
    def size(self) -> int:
        return int(sum(array.size for array in self.named_arrays().values()))

    def flatten(self) -> Vector:
        arrays = [array.reshape(-1) for array in self.named_arrays().values()]
        if not arrays:
            return np.zeros(0)
        return np.concatenate(arrays)

    def assign_flat(self, flat: Vector) -> None:
        """Overwrite every array in place from a flat vector (``flatten`` order)."""
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != self.size:
            raise ShapeError(f"flat vector of length {flat.size}, expected {self.size}")
        offset = 0
        for array in self.named_arrays().values():
            n = array.size
            array[...] = flat[offset : offset + n].reshape(array.shape)
            offset += n

    def global_norm(self) -> float:
        return float(
            np.sqrt(sum(np.sum(a * a) for a in self.named_arrays().values()))
        )

    def scale_(self, factor: float) -> None:
        for array in self.named_arrays().values():
            array *= factor

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.named_arrays().values())

    def require_same_shapes(self, other: "ParameterGroup", what: str = "") -> None:
        """Raise :class:`ShapeError` unless ``other`` mirrors this group exactly."""
        mine, theirs = self.shapes(), other.shapes()
        if mine != theirs:
            missing = sorted(set(mine) ^ set(theirs))
            differing = sorted(
                name for name in set(mine) & set(theirs) if mine[name] != theirs[name]
            )
            raise ShapeError(
                f"{what or 'parameter'} shapes disagree "
                f"(unmatched: {missing}, differing: {differing})"
            )


def not_a_parameter(**kwargs):
    """Dataclass field excluded from ``named_arrays``/``map`` (dims, flags)."""
    return dataclasses.field(metadata={"param": False}, **kwargs)

"""Exception types raised across the package.

The CLI maps each family to an exit code (see ``src.main.exit_code``).
"""


class MultiLstmError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MultiLstmError, ValueError):
    """Array shapes do not agree."""


class ArgumentError(MultiLstmError, ValueError):
    """An argument is outside its valid domain (empty input, bad offset, ...)."""


class ValidationError(MultiLstmError, ValueError):
    """Data on disk or in memory violates its format or invariants."""


class ConfigurationError(MultiLstmError):
    """Model, training or run configuration is inconsistent."""


class VocabularyError(MultiLstmError, KeyError):
    """A class name is not part of the dataset vocabulary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class CheckpointError(MultiLstmError):
    """A checkpoint is missing, malformed or incompatible."""


class GenerationError(MultiLstmError):
    """A synthetic dataset rule cannot be realised."""


class DivergenceError(MultiLstmError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class GradientCheckError(MultiLstmError, ArithmeticError):
    """The finite-difference oracle failed or disagreed with a backward pass."""


class UndefinedMetricError(MultiLstmError, ArithmeticError):
    """A metric is undefined for the given input (e.g. AP with no positives)."""


class InternalConsistencyError(MultiLstmError, RuntimeError):
    """A cache does not belong to the parameters it is used with."""

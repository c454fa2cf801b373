"""Exception hierarchy.

ValidationError covers bad inputs (files, configs, shapes); the CLI maps it
to exit code 2. Everything else surfaces as a runtime failure (exit 1).
"""

from __future__ import annotations


class UqkitError(Exception):
    """Base class for all package errors."""


class ValidationError(UqkitError, ValueError):
    """Invalid input data, file, or configuration."""


class TensorFormatError(ValidationError):
    """Malformed or inconsistent UBT tensor file."""


class ManifestError(ValidationError):
    """Manifest document or referenced tensors violate the schema."""


class DegenerateMetricError(UqkitError):
    """Metric undefined on the given inputs (e.g. AUROC with one class)."""


class TrainingDivergedError(UqkitError):
    """Non-finite loss encountered during head training."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss

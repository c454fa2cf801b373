"""Dataset manifests: named splits binding embeddings, logits, and labels.

A manifest is a UTF-8 JSON document::

    {"name": ..., "classes": [...],
     "splits": {"train": {"role": "train", "embeddings": "...", "labels": "..."},
                ...}}

Tensor paths are relative to the manifest's directory. All referenced
tensors are loaded and shape-checked eagerly; a returned manifest is
fully validated and immutable.

Sequence datasets store logits as [N x L x K] and labels as [N x L],
with the reserved padding class id K marking unused trailing steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ManifestError, TensorFormatError
from .tensors import load_tensor

ROLES = (
    "train",
    "validation",
    "test",
    "covariate_shift",
    "semantic_shift",
    "label_uncertainty",
    "subpopulation",
)

SOFT_LABEL_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class SplitSpec:
    """One split's loaded tensors. At least one of embeddings/logits is set."""

    name: str
    role: str
    labels: np.ndarray
    embeddings: np.ndarray | None = None
    logits: np.ndarray | None = None
    soft_labels: np.ndarray | None = None
    groups: np.ndarray | None = None

    @property
    def num_examples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def is_sequence(self) -> bool:
        return self.labels.ndim == 2

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitSpec):
            return NotImplemented
        if (self.name, self.role) != (other.name, other.role):
            return False
        for attr in ("labels", "embeddings", "logits", "soft_labels", "groups"):
            a, b = getattr(self, attr), getattr(other, attr)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    name: str
    classes: tuple[str, ...]
    splits: dict[str, SplitSpec]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def splits_with_role(self, role: str) -> list[SplitSpec]:
        return [s for s in self.splits.values() if s.role == role]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return (
            self.name == other.name
            and self.classes == other.classes
            and self.splits == other.splits
        )


def _load_referenced(base: Path, rel: str, split: str, column: str) -> np.ndarray:
    path = base / rel
    if not path.is_file():
        raise ManifestError(f"split '{split}': {column} file not found: {path}")
    try:
        tensor = load_tensor(path)
    except TensorFormatError as exc:
        raise ManifestError(f"split '{split}': {column}: {exc}") from exc
    return tensor.array


def _validate_split(name: str, spec: dict, base: Path, num_classes: int) -> SplitSpec:
    if not isinstance(spec, dict):
        raise ManifestError(f"split '{name}': expected an object")
    role = spec.get("role")
    if role not in ROLES:
        raise ManifestError(f"split '{name}': unknown role {role!r}")
    if "labels" not in spec:
        raise ManifestError(f"split '{name}': missing labels")
    if "embeddings" not in spec and "logits" not in spec:
        raise ManifestError(f"split '{name}': needs at least one of embeddings/logits")
    unknown = set(spec) - {"role", "labels", "embeddings", "logits", "soft_labels", "groups"}
    if unknown:
        raise ManifestError(f"split '{name}': unknown keys {sorted(unknown)}")

    labels = _load_referenced(base, spec["labels"], name, "labels")
    if labels.dtype.kind != "i" or labels.ndim not in (1, 2):
        raise ManifestError(f"split '{name}': labels must be [N] or [N x L] integers")
    n = labels.shape[0]
    if n < 1:
        raise ManifestError(f"split '{name}': empty split")
    is_seq = labels.ndim == 2
    # Flat labels live in [0, K); sequence labels may also use the padding id K.
    max_label = num_classes if is_seq else num_classes - 1
    if labels.min() < 0 or labels.max() > max_label:
        raise ManifestError(
            f"split '{name}': label ids must be in [0, {max_label}], "
            f"found range [{labels.min()}, {labels.max()}]"
        )

    embeddings = logits = soft_labels = groups = None
    if "embeddings" in spec:
        embeddings = _load_referenced(base, spec["embeddings"], name, "embeddings")
        if embeddings.ndim != 2:
            raise ManifestError(f"split '{name}': embeddings must be [N x D]")
        if embeddings.shape[0] != n:
            raise ManifestError(
                f"split '{name}': embeddings rows ({embeddings.shape[0]}) != "
                f"labels length ({n})"
            )
        if not np.all(np.isfinite(embeddings)):
            raise ManifestError(f"split '{name}': non-finite embeddings")

    if "logits" in spec:
        logits = _load_referenced(base, spec["logits"], name, "logits")
        if is_seq:
            want = (n, labels.shape[1], num_classes)
            if logits.shape != want:
                raise ManifestError(
                    f"split '{name}': sequence logits shape {logits.shape} != {want}"
                )
        else:
            if logits.shape != (n, num_classes):
                raise ManifestError(
                    f"split '{name}': logits shape {logits.shape} != {(n, num_classes)}"
                )
        if not np.all(np.isfinite(logits)):
            raise ManifestError(f"split '{name}': non-finite logits")

    if "soft_labels" in spec:
        if is_seq:
            raise ManifestError(f"split '{name}': soft_labels unsupported for sequences")
        soft_labels = _load_referenced(base, spec["soft_labels"], name, "soft_labels")
        if soft_labels.shape != (n, num_classes):
            raise ManifestError(
                f"split '{name}': soft_labels shape {soft_labels.shape} != "
                f"{(n, num_classes)}"
            )
        if soft_labels.min() < 0:
            raise ManifestError(f"split '{name}': negative soft label")
        sums = soft_labels.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > SOFT_LABEL_TOL)[0]
        if bad.size:
            i = int(bad[0])
            raise ManifestError(
                f"split '{name}': soft_labels row {i} sum {sums[i]:.6g} (expected 1)"
            )
        # Renormalize exactly once after validation; exporters emit f32.
        soft_labels = soft_labels.astype(np.float64) / sums[:, None]

    if "groups" in spec:
        groups = _load_referenced(base, spec["groups"], name, "groups")
        if groups.dtype.kind != "i" or groups.shape != (n,):
            raise ManifestError(f"split '{name}': groups must be [N] integers")
        if groups.min() < 0:
            raise ManifestError(f"split '{name}': negative group id")

    for arr in (labels, embeddings, logits, soft_labels, groups):
        if arr is not None:
            arr.setflags(write=False)

    return SplitSpec(
        name=name,
        role=role,
        labels=labels,
        embeddings=embeddings,
        logits=logits,
        soft_labels=soft_labels,
        groups=groups,
    )


def load_manifest(path) -> DatasetManifest:
    """Load and eagerly validate a manifest document and all referenced tensors."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    for key in ("name", "classes", "splits"):
        if key not in doc:
            raise ManifestError(f"{path}: missing key '{key}'")

    name = doc["name"]
    classes = doc["classes"]
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise ManifestError(f"{path}: classes must be a list of strings")
    if len(classes) < 2:
        raise ManifestError(f"{path}: need at least 2 classes, got {len(classes)}")
    if len(set(classes)) != len(classes):
        raise ManifestError(f"{path}: duplicate class names")
    if not isinstance(doc["splits"], dict) or not doc["splits"]:
        raise ManifestError(f"{path}: splits must be a non-empty object")

    base = path.parent
    splits = {
        split_name: _validate_split(split_name, spec, base, len(classes))
        for split_name, spec in doc["splits"].items()
    }
    return DatasetManifest(name=name, classes=tuple(classes), splits=splits)

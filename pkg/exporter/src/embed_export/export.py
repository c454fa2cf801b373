"""Run an encoder over a dataset and write the UBT + manifest bundle."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import resolve_dataset, role_for_split
from .models import resolve_model
from .ubt import write_ubt


@dataclass(frozen=True)
class ExportSpec:
    model: str
    dataset: str
    out_dir: str
    splits: tuple[str, ...] | None = None
    roles: dict = field(default_factory=dict)
    batch_size: int = 32
    image_size: int = 64
    weights: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.image_size < 1:
            raise ValueError("batch_size and image_size must be >= 1")


def export(spec: ExportSpec) -> Path:
    """Encode every split and write the manifest; returns the manifest path.

    Embeddings [N x D] f32 and labels [N] i32 are always written; logits
    [N x K] f32 only when the encoder's classifier width matches the
    dataset's class count. Ordering follows the dataset's deterministic
    index, so re-exports produce identical label tensors.
    """
    encoder = resolve_model(spec.model, spec.weights, spec.seed)
    name, classes, datasets = resolve_dataset(
        spec.dataset, list(spec.splits) if spec.splits else None
    )
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with_logits = encoder.num_model_classes == len(classes)
    manifest: dict = {"name": name, "classes": classes, "splits": {}}
    for split_name, dataset in datasets.items():
        emb_parts, logit_parts = [], []
        for batch in dataset.batches(spec.batch_size, spec.image_size):
            emb, logits = encoder.encode(batch)
            if emb_parts and emb.shape[1] != emb_parts[0].shape[1]:
                raise RuntimeError(
                    f"embedding width drifted between batches: "
                    f"{emb_parts[0].shape[1]} -> {emb.shape[1]}"
                )
            emb_parts.append(emb)
            logit_parts.append(logits)
        embeddings = np.concatenate(emb_parts)
        labels = dataset.labels()

        entry = {"role": role_for_split(split_name, spec.roles)}
        write_ubt(embeddings, out_dir / f"{split_name}_embeddings.ubt")
        entry["embeddings"] = f"{split_name}_embeddings.ubt"
        if with_logits:
            write_ubt(np.concatenate(logit_parts), out_dir / f"{split_name}_logits.ubt")
            entry["logits"] = f"{split_name}_logits.ubt"
        write_ubt(labels, out_dir / f"{split_name}_labels.ubt")
        entry["labels"] = f"{split_name}_labels.ubt"
        manifest["splits"][split_name] = entry

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path

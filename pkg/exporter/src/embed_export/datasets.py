"""Dataset resolvers.

`folder:<root>` expects <root>/<split>/<class>/<image files>; class names
and file names are sorted so the export order is deterministic across runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")

KNOWN_ROLES = (
    "train",
    "validation",
    "test",
    "covariate_shift",
    "semantic_shift",
    "label_uncertainty",
    "subpopulation",
)


class FolderDataset:
    """One split of an image-folder dataset: (path, label) pairs in a fixed
    deterministic order."""

    def __init__(self, root: Path, classes: list[str]):
        self.root = root
        self.classes = classes
        self.items: list[tuple[Path, int]] = []
        for label, name in enumerate(classes):
            class_dir = root / name
            if not class_dir.is_dir():
                continue
            for file in sorted(class_dir.iterdir()):
                if file.suffix.lower() in IMAGE_EXTENSIONS:
                    self.items.append((file, label))
        if not self.items:
            raise ValueError(f"no images under {root}")

    def __len__(self):
        return len(self.items)

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=np.int32)

    def batches(self, batch_size: int, image_size: int):
        """Yield float32 NCHW tensors scaled to [0, 1]."""
        for start in range(0, len(self.items), batch_size):
            chunk = self.items[start : start + batch_size]
            arrays = []
            for path, _ in chunk:
                with Image.open(path) as img:
                    img = img.convert("RGB").resize((image_size, image_size))
                    arrays.append(np.asarray(img, dtype=np.float32) / 255.0)
            batch = np.stack(arrays).transpose(0, 3, 1, 2)
            yield torch.from_numpy(batch)


def resolve_dataset(dataset_id: str, splits: list[str] | None):
    """Returns (name, classes, {split: FolderDataset})."""
    kind, _, arg = dataset_id.partition(":")
    if kind != "folder" or not arg:
        raise ValueError(
            f"unknown dataset id {dataset_id!r}; expected folder:<root>"
        )
    root = Path(arg)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} does not exist")
    split_names = splits or sorted(p.name for p in root.iterdir() if p.is_dir())
    if not split_names:
        raise ValueError(f"no split directories under {root}")
    # the class list is the union over splits, sorted, so every split agrees
    classes = sorted({
        p.name
        for split in split_names
        for p in (root / split).iterdir()
        if p.is_dir()
    })
    if len(classes) < 2:
        raise ValueError(f"need at least 2 class directories, found {classes}")
    datasets = {split: FolderDataset(root / split, classes) for split in split_names}
    return root.name, classes, datasets


def role_for_split(split: str, overrides: dict[str, str]) -> str:
    if split in overrides:
        role = overrides[split]
    elif split in KNOWN_ROLES:
        role = split
    elif split in ("val", "valid"):
        role = "validation"
    else:
        raise ValueError(
            f"cannot infer a role for split {split!r}; pass --role {split}=<role>"
        )
    if role not in KNOWN_ROLES:
        raise ValueError(f"unknown role {role!r} for split {split!r}")
    return role

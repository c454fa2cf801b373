"""Head persistence: a directory of UBT tensors plus a JSON descriptor.

Every parameter and frozen buffer is stored as float64 bits, and the
descriptor keeps the construction seed, so a reloaded head reproduces
predictions bit-exactly (seeded MC streams included).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..tensors import load_tensor, save_tensor
from .base import Head
from .ensemble import EnsembleHead


def _buffers(head: Head) -> dict[str, np.ndarray]:
    out = dict(head.params())
    if head.kind == "rfgp":
        out.update({"w_rf": head.w_rf, "b_rf": head.b_rf, "precision": head.precision})
    return out


def save_head(head: Head, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(head, EnsembleHead):
        for i, member in enumerate(head.members):
            save_head(member, out_dir / f"member{i}")
        descriptor = {
            "kind": head.kind,
            "hyperparams": head.hyperparams(),
            "seed": head.seed,
            "train_loss": head.train_loss,
            "flags": head.descriptor_flags(),
        }
    else:
        for name, arr in _buffers(head).items():
            save_tensor(arr.astype(np.float64, copy=False), out_dir / f"{name}.ubt")
        descriptor = {
            "kind": head.kind,
            "dim": head.dim,
            "num_classes": head.num_classes,
            "hyperparams": head.hyperparams(),
            "seed": head.seed,
            "train_loss": head.train_loss,
            "flags": head.descriptor_flags(),
        }
    (out_dir / "head.json").write_text(json.dumps(descriptor, indent=1, sort_keys=True))
    return out_dir


def load_head(in_dir) -> Head:
    from .training import make_head  # circular-import dodge

    in_dir = Path(in_dir)
    desc_path = in_dir / "head.json"
    if not desc_path.is_file():
        raise ValidationError(f"no head descriptor at {desc_path}")
    desc = json.loads(desc_path.read_text())
    kind = desc.get("kind")
    if kind == "ensemble":
        members = []
        for i in range(int(desc["hyperparams"]["num_members"])):
            members.append(load_head(in_dir / f"member{i}"))
        head = EnsembleHead(members)
    else:
        head = make_head(
            kind, int(desc["dim"]), int(desc["num_classes"]),
            seed=int(desc["seed"]), **desc.get("hyperparams", {}),
        )
        for name, arr in _buffers(head).items():
            loaded = load_tensor(in_dir / f"{name}.ubt").array
            if loaded.shape != arr.shape:
                raise ValidationError(
                    f"{kind} head buffer {name}: stored shape {loaded.shape} != "
                    f"expected {arr.shape}"
                )
            arr[...] = loaded
        if kind == "rfgp":
            head._chol = None
    head.train_loss = desc.get("train_loss")
    return head

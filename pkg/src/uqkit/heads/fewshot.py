"""Few-shot index sampling: exactly x examples per class."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


def fewshot_sample(labels, shots: int, seed: int, num_classes: int | None = None) -> np.ndarray:
    """Draw `shots` indices per class without replacement, deterministically
    for a given (seed, shots). Classes are processed in id order."""
    y = np.asarray(labels)
    if shots < 1:
        raise ValidationError(f"shots must be >= 1, got {shots}")
    k = int(num_classes) if num_classes is not None else int(y.max()) + 1
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(k):
        idx = np.nonzero(y == c)[0]
        if idx.size < shots:
            raise ValidationError(
                f"class {c} has only {idx.size} examples, need {shots}"
            )
        picks.append(rng.choice(idx, size=shots, replace=False))
    return np.concatenate(picks)

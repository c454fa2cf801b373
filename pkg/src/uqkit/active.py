"""Batch active learning over embedding datasets.

The loop alternates from-scratch head training with acquisition (margin or
uniform) until the label budget is exhausted. Pool sizes derive from the
class count: initial labeled set 2x K, acquisition batch 0.5x K, cap 20x K
by default, each rounded to the nearest integer and floored at 1. Every
round retrains cold with the round index folded into the seed, which keeps
runs deterministic and independent of acquisition order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UqkitError, ValidationError
from .heads import TrainConfig, train_head
from .manifest import DatasetManifest

STRATEGIES = ("margin", "uniform")


@dataclass
class PoolState:
    """Labeled / unlabeled index bookkeeping plus the acquisition history."""

    labeled: np.ndarray
    unlabeled: np.ndarray
    history: list[tuple[int, tuple[int, ...], float]] = field(default_factory=list)

    def __post_init__(self):
        overlap = np.intersect1d(self.labeled, self.unlabeled)
        if overlap.size:
            raise ValidationError(f"labeled/unlabeled overlap: {overlap[:5]}")

    def acquire(self, indices: np.ndarray) -> None:
        """Move indices unlabeled -> labeled atomically."""
        indices = np.asarray(indices)
        mask = np.isin(self.unlabeled, indices)
        if mask.sum() != indices.size:
            raise ValidationError("acquired index not in the unlabeled pool")
        self.labeled = np.concatenate([self.labeled, indices])
        self.unlabeled = self.unlabeled[~mask]


@dataclass(frozen=True)
class ALConfig:
    init_per_class_factor: float = 2.0
    max_per_class_factor: float = 20.0
    batch_per_class_factor: float = 0.5
    strategy: str = "margin"
    seed: int = 0
    head_kind: str = "linear"
    head_hyper: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if min(self.init_per_class_factor, self.max_per_class_factor,
               self.batch_per_class_factor) <= 0:
            raise ValidationError("pool size factors must be > 0")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")

    def sizes(self, num_classes: int) -> tuple[int, int, int]:
        """(init, batch, max) sizes: factor x K, round-half-up, at least 1."""
        def derive(factor):
            return max(1, int(math.floor(factor * num_classes + 0.5)))

        return (
            derive(self.init_per_class_factor),
            derive(self.batch_per_class_factor),
            derive(self.max_per_class_factor),
        )


class ActiveLearningError(UqkitError):
    """Training failed mid-loop; partial history is preserved."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


def margin_scores(probs) -> np.ndarray:
    """Top-1 minus top-2 probability per row; smaller = more informative."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValidationError(f"margin needs [N x K] probabilities with K >= 2, got {p.shape}")
    top2 = -np.partition(-p, 1, axis=1)[:, :2]
    return top2[:, 0] - top2[:, 1]


def acquire_batch(pool: PoolState, scores, batch_size: int, strategy: str,
                  seed: int) -> np.ndarray:
    """Pick batch_size unlabeled indices and move them into the labeled set.

    Margin picks the smallest scores with ties broken by lowest pool index;
    uniform samples without replacement from a generator seeded per call.
    """
    if pool.unlabeled.size == 0:
        raise ValidationError("empty unlabeled pool")
    if batch_size > pool.unlabeled.size:
        raise ValidationError(
            f"batch_size {batch_size} exceeds pool size {pool.unlabeled.size}"
        )
    if strategy == "margin":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != pool.unlabeled.shape:
            raise ValidationError("scores must align with the unlabeled pool")
        picked = pool.unlabeled[np.argsort(scores, kind="stable")[:batch_size]]
    elif strategy == "uniform":
        rng = np.random.default_rng(seed)
        picked = rng.choice(pool.unlabeled, size=batch_size, replace=False)
    else:
        raise ValidationError(f"unknown strategy {strategy!r}")
    pool.acquire(picked)
    return picked


def _stratified_init(labels: np.ndarray, num_classes: int, init_size: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Class-stratified uniform draw: sizes as even as possible, remainder
    going to the lowest class ids."""
    base, extra = divmod(init_size, num_classes)
    picks = []
    for c in range(num_classes):
        want = base + (1 if c < extra else 0)
        idx = np.nonzero(labels == c)[0]
        if idx.size < want:
            raise ValidationError(f"class {c} has {idx.size} pool examples, need {want}")
        if want:
            picks.append(rng.choice(idx, size=want, replace=False))
    return np.concatenate(picks)


def al_loop(manifest: DatasetManifest, cfg: ALConfig,
            train_split: str | None = None, test_split: str | None = None):
    """Run the acquisition loop; returns (curve, pool).

    curve is a list of (num_labels, test_accuracy) points, one for the
    initial set and one per acquisition round until the label cap. Splits
    default to the first train-role and test-role splits of the manifest.
    """
    def pick(name, role):
        if name is not None:
            if name not in manifest.splits:
                raise ValidationError(f"no split named '{name}'")
            return manifest.splits[name]
        candidates = manifest.splits_with_role(role)
        if not candidates:
            raise ValidationError(f"manifest has no {role} split")
        return candidates[0]

    train = pick(train_split, "train")
    test = pick(test_split, "test")
    for split in (train, test):
        if split.embeddings is None:
            raise ValidationError(f"split '{split.name}' needs embeddings")
    return run_al(
        train.embeddings.astype(np.float64), train.labels.astype(np.int64),
        test.embeddings.astype(np.float64), test.labels.astype(np.int64),
        manifest.num_classes, cfg,
    )


def run_al(train_x, train_y, test_x, test_y, num_classes: int, cfg: ALConfig):
    init_size, batch_size, max_size = cfg.sizes(num_classes)
    n = train_x.shape[0]
    if n < max_size:
        raise ValidationError(f"pool has {n} examples, label cap needs {max_size}")

    rng = np.random.default_rng(cfg.seed)
    init = _stratified_init(train_y, num_classes, init_size, rng)
    pool = PoolState(labeled=init, unlabeled=np.setdiff1d(np.arange(n), init))

    curve: list[tuple[int, float]] = []
    round_idx = 0
    while True:
        try:
            head = train_head(
                cfg.head_kind,
                train_x[pool.labeled], train_y[pool.labeled],
                _round_cfg(cfg.train, cfg.seed, round_idx),
                num_classes=num_classes, **cfg.head_hyper,
            )
        except UqkitError as exc:
            raise ActiveLearningError(
                f"round {round_idx} training failed: {exc}", pool.history
            ) from exc
        acc = float((head.predict_probs(test_x).argmax(axis=1) == test_y).mean())
        curve.append((pool.labeled.size, acc))

        remaining = min(batch_size, max_size - pool.labeled.size, pool.unlabeled.size)
        if remaining <= 0:
            break
        if cfg.strategy == "margin":
            # scores come from the just-trained round model over the full
            # remaining pool; ensembles contribute their combined mean probs
            scores = margin_scores(head.predict_probs(train_x[pool.unlabeled]))
        else:
            scores = None
        picked = acquire_batch(
            pool, scores, remaining, cfg.strategy,
            seed=_fold_seed(cfg.seed, round_idx),
        )
        pool.history.append((round_idx, tuple(int(i) for i in picked), acc))
        round_idx += 1
    return curve, pool


def _round_cfg(train: TrainConfig, seed: int, round_idx: int) -> TrainConfig:
    return replace(train, seed=_fold_seed(seed ^ train.seed, round_idx))


def _fold_seed(seed: int, round_idx: int) -> int:
    return (seed * 1_000_003 + round_idx * 7_919 + 1) % (2**63)

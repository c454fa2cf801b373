"""SGD-with-momentum training loop for heads.

Runs are deterministic per seed: the shuffle order, noise draws, and any
member seeds all derive from TrainConfig.seed through a single generator.
Zero epochs returns the head at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergedError, ValidationError
from .base import Head
from .batch_ensemble import BatchEnsembleHead
from .ensemble import EnsembleHead
from .heteroscedastic import HeteroscedasticHead
from .linear import LinearSoftmaxHead
from .mc_dropout import MCDropoutHead
from .rfgp import RFGPHead

HEAD_KINDS = {
    "linear": LinearSoftmaxHead,
    "rfgp": RFGPHead,
    "heteroscedastic": HeteroscedasticHead,
    "batch_ensemble": BatchEnsembleHead,
    "mc_dropout": MCDropoutHead,
}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ValidationError(f"bad optimizer settings: {self}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError(f"bad schedule settings: {self}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, step: int, total_steps: int) -> float:
        if self.lr_schedule == "constant" or total_steps <= 1:
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def make_head(kind: str, dim: int, num_classes: int, seed: int = 0, **hyper) -> Head:
    if kind not in HEAD_KINDS:
        raise ValidationError(f"unknown head kind {kind!r} (have {sorted(HEAD_KINDS)})")
    if "hidden" in hyper and isinstance(hyper["hidden"], list):
        hyper["hidden"] = tuple(hyper["hidden"])
    return HEAD_KINDS[kind](dim, num_classes, seed=seed, **hyper)


def train_head(head_or_kind, embeddings, labels, cfg: TrainConfig, **hyper) -> Head:
    """Train a head on fixed embeddings; returns it with train_loss recorded.

    Accepts a Head instance or a kind name (a fresh head is then built from
    cfg.seed). Kind "ensemble" takes member_kind / num_members hyperparams and
    trains each member from scratch with an offset seed. For an RFGP head the
    Laplace precision accumulates over the training features once gradient
    training finishes.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError(f"embeddings {x.shape} / labels {y.shape} mismatch")

    if isinstance(head_or_kind, str):
        if head_or_kind == "ensemble":
            member_kind = hyper.pop("member_kind", "linear")
            num_members = int(hyper.pop("num_members", 4))
            k = _num_classes(y, hyper)
            members = []
            for i in range(num_members):
                member_cfg = _reseeded(cfg, cfg.seed + 7919 * (i + 1))
                member = make_head(member_kind, x.shape[1], k,
                                   seed=member_cfg.seed, **hyper)
                members.append(train_head(member, x, y, member_cfg))
            ensemble = EnsembleHead(members)
            if cfg.epochs > 0:
                ensemble.train_loss = float(np.mean([m.train_loss for m in members]))
            return ensemble
        k = _num_classes(y, hyper)
        head = make_head(head_or_kind, x.shape[1], k, seed=cfg.seed, **hyper)
    else:
        head = head_or_kind
    if head.dim != x.shape[1]:
        raise ValidationError(f"head dim {head.dim} != embedding dim {x.shape[1]}")

    rng = np.random.default_rng(cfg.seed)
    params = head.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = x.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            noise = head.sample_noise(rng, idx.size)
            loss, grads = head.loss_and_grads(x[idx], y[idx], noise)
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, loss)
            lr = cfg.lr_at(step, total_steps)
            for name, p in params.items():
                g = grads[name]
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * p
                velocity[name] = cfg.momentum * velocity[name] + g
                p -= lr * velocity[name]
            epoch_loss += loss * idx.size
            step += 1
        head.train_loss = epoch_loss / n

    if isinstance(head, RFGPHead) and cfg.epochs > 0:
        head.accumulate_precision(head.features(x))
    return head


def _num_classes(y: np.ndarray, hyper: dict) -> int:
    return int(hyper.pop("num_classes", int(y.max()) + 1))


def _reseeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed,
        lr_schedule=cfg.lr_schedule,
    )

"""Shared head interface and softmax utilities.

A head is a trainable model over fixed embeddings. Parameters are float64
numpy arrays exposed by reference through params(), so the trainer and the
finite-difference checker can update them in place. Heads with stochastic
losses (heteroscedastic noise, dropout masks) draw their auxiliary noise
through sample_noise() so a fixed draw can be shared between the analytic
and numeric sides of a gradient check.
"""

from __future__ import annotations

import numpy as np

PROB_EPS = 1e-12


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss_and_dlogits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient wrt the logits."""
    n = logits.shape[0]
    p = softmax(logits)
    picked = np.clip(p[np.arange(n), labels], PROB_EPS, 1.0)
    loss = float(-np.mean(np.log(picked)))
    dz = p.copy()
    dz[np.arange(n), labels] -= 1.0
    return loss, dz / n


class Head:
    """Base class; subclasses fill in the parameter and loss plumbing."""

    kind: str = ""

    def __init__(self, dim: int, num_classes: int, seed: int = 0):
        if dim < 1 or num_classes < 2:
            raise ValueError(f"need dim >= 1 and num_classes >= 2, got {dim}, {num_classes}")
        self.dim = dim
        self.num_classes = num_classes
        self.seed = int(seed)
        self.train_loss: float | None = None

    def params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def sample_noise(self, rng: np.random.Generator, n: int):
        """Auxiliary randomness for one batch of n examples; None if the
        loss is deterministic."""
        return None

    def loss(self, x: np.ndarray, y: np.ndarray, noise=None) -> float:
        return self.loss_and_grads(x, y, noise)[0]

    def loss_and_grads(self, x, y, noise=None) -> tuple[float, dict[str, np.ndarray]]:
        raise NotImplementedError

    def predict_probs(self, x: np.ndarray, seed: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def hyperparams(self) -> dict:
        """Constructor arguments (minus dim/classes/seed), JSON-ready."""
        return {}

    def descriptor_flags(self) -> dict:
        """Interpretation choices worth surfacing in reports."""
        return {}

    def _prediction_rng(self, seed: int | None) -> np.random.Generator:
        # Offset keeps the prediction stream distinct from the init stream.
        return np.random.default_rng(self.seed + 0x9E3779B9 if seed is None else seed)

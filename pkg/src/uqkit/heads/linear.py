"""Plain linear-softmax output layer, the no-changes baseline."""

from __future__ import annotations

import numpy as np

from .base import Head, ce_loss_and_dlogits, softmax


class LinearSoftmaxHead(Head):
    kind = "linear"

    def __init__(self, dim: int, num_classes: int, seed: int = 0):
        super().__init__(dim, num_classes, seed)
        rng = np.random.default_rng(seed)
        self.w = rng.standard_normal((dim, num_classes)) / np.sqrt(dim)
        self.b = np.zeros(num_classes)

    def params(self):
        return {"w": self.w, "b": self.b}

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.w + self.b

    def loss_and_grads(self, x, y, noise=None):
        x = np.asarray(x, dtype=np.float64)
        loss, dz = ce_loss_and_dlogits(self.logits(x), y)
        return loss, {"w": x.T @ dz, "b": dz.sum(axis=0)}

    def predict_probs(self, x, seed=None):
        return softmax(self.logits(x))

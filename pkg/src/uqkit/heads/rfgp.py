"""Random-feature Gaussian process output layer with a Laplace covariance.

The frozen random features approximate an RBF kernel:

    phi(x) = sqrt(2 / D_rf) * cos(x @ W_rf + b_rf)

with W_rf entries i.i.d. unit normal divided by the lengthscale and b_rf
uniform on [0, 2pi). Only beta trains by gradient; the predictive variance

    var(x) = phi(x)^T (I + Phi^T Phi)^{-1} phi(x)

comes from a precision matrix accumulated over training features after
gradient training finishes. The sqrt(2/D_rf) scale makes phi(x)^T phi(x')
an unbiased RBF estimate.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from .base import Head, ce_loss_and_dlogits, softmax

MEAN_FIELD_LAMBDA = math.pi / 8.0


class RFGPHead(Head):
    kind = "rfgp"

    def __init__(
        self,
        dim: int,
        num_classes: int,
        seed: int = 0,
        num_features: int = 256,
        lengthscale: float | None = None,
        mean_field: bool = True,
    ):
        super().__init__(dim, num_classes, seed)
        if num_features < 1:
            raise ValueError("num_features must be >= 1")
        self.num_features = int(num_features)
        self.lengthscale = float(lengthscale) if lengthscale else math.sqrt(dim)
        self.mean_field = bool(mean_field)
        rng = np.random.default_rng(seed)
        # Frozen random-feature embedding; never touched by training.
        self.w_rf = rng.standard_normal((dim, self.num_features)) / self.lengthscale
        self.b_rf = rng.uniform(0.0, 2.0 * math.pi, self.num_features)
        self.scale = math.sqrt(2.0 / self.num_features)
        self.beta = rng.standard_normal((self.num_features, num_classes)) / math.sqrt(
            self.num_features
        )
        self.precision = np.eye(self.num_features)
        self._chol: np.ndarray | None = None

    def params(self):
        return {"beta": self.beta}

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.scale * np.cos(x @ self.w_rf + self.b_rf)

    def accumulate_precision(self, features: np.ndarray) -> None:
        """Add Phi^T Phi for a batch of training features (Laplace step)."""
        self.precision = self.precision + features.T @ features
        self._chol = None

    def posterior_variance(self, x: np.ndarray) -> np.ndarray:
        """Per-example predictive variance via a Cholesky solve."""
        if self._chol is None:
            self._chol = linalg.cho_factor(self.precision, lower=True)
        phi = self.features(x)
        solved = linalg.cho_solve(self._chol, phi.T)
        return np.sum(phi.T * solved, axis=0)

    def loss_and_grads(self, x, y, noise=None):
        phi = self.features(x)
        loss, dz = ce_loss_and_dlogits(phi @ self.beta, y)
        return loss, {"beta": phi.T @ dz}

    def predict_probs(self, x, seed=None):
        phi = self.features(x)
        logits = phi @ self.beta
        if self.mean_field:
            var = self.posterior_variance(x)
            logits = logits / np.sqrt(1.0 + MEAN_FIELD_LAMBDA * var)[:, None]
        return softmax(logits)

    def hyperparams(self):
        return {
            "num_features": self.num_features,
            "lengthscale": self.lengthscale,
            "mean_field": self.mean_field,
        }

    def descriptor_flags(self):
        flags = {"laplace_weighting": "pooled-multiclass"}
        if self.mean_field:
            flags["mean_field_variance"] = "lambda=pi/8"
        return flags


def gp_posterior_variance(head: RFGPHead, embeddings) -> np.ndarray:
    return head.posterior_variance(embeddings)

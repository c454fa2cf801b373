"""Monte Carlo dropout over a small MLP head.

The same mask distribution applies at train and eval time (inverted
dropout, scale 1/(1-rate)); predictions average `samples` stochastic
passes from a seeded stream. With rate 0 every pass equals the
deterministic base network.
"""

from __future__ import annotations

import numpy as np

from .base import Head, ce_loss_and_dlogits, softmax


class MCDropoutHead(Head):
    kind = "mc_dropout"

    def __init__(
        self,
        dim: int,
        num_classes: int,
        seed: int = 0,
        hidden: tuple[int, ...] = (16,),
        rate: float = 0.1,
        samples: int = 50,
    ):
        super().__init__(dim, num_classes, seed)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"rate must be in [0, 1), got {rate}")
        self.hidden = tuple(int(h) for h in hidden)
        self.rate = float(rate)
        self.samples = int(samples)
        rng = np.random.default_rng(seed)
        sizes = (dim, *self.hidden, num_classes)
        self.weights = [
            rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
            for n_in, n_out in zip(sizes[:-1], sizes[1:])
        ]
        self.biases = [np.zeros(n_out) for n_out in sizes[1:]]

    def params(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def sample_noise(self, rng, n):
        """One inverted-dropout mask per hidden layer."""
        keep = 1.0 - self.rate
        return [
            np.where(rng.random((n, h)) < keep, 1.0 / keep, 0.0) for h in self.hidden
        ]

    def _forward(self, x, masks):
        h = x
        cache = []  # (layer input, pre-mask tanh output) per hidden layer
        for i in range(len(self.hidden)):
            t = np.tanh(h @ self.weights[i] + self.biases[i])
            cache.append((h, t))
            h = t * masks[i]
        logits = h @ self.weights[-1] + self.biases[-1]
        return logits, cache, h

    def loss_and_grads(self, x, y, noise=None):
        x = np.asarray(x, dtype=np.float64)
        masks = noise if noise is not None else [np.ones((x.shape[0], h)) for h in self.hidden]
        logits, cache, last_h = self._forward(x, masks)
        loss, dz = ce_loss_and_dlogits(logits, y)
        grads = {}
        grads[f"w{len(self.hidden)}"] = last_h.T @ dz
        grads[f"b{len(self.hidden)}"] = dz.sum(axis=0)
        dh = dz @ self.weights[-1].T
        for i in reversed(range(len(self.hidden))):
            h_in, t = cache[i]
            da = dh * masks[i] * (1.0 - t**2)
            grads[f"w{i}"] = h_in.T @ da
            grads[f"b{i}"] = da.sum(axis=0)
            dh = da @ self.weights[i].T
        return loss, grads

    def predict_probs(self, x, seed=None):
        x = np.asarray(x, dtype=np.float64)
        if self.rate == 0.0:
            # every stochastic pass equals the base network; skip sampling
            masks = [np.ones((x.shape[0], h)) for h in self.hidden]
            return softmax(self._forward(x, masks)[0])
        rng = self._prediction_rng(seed)
        total = np.zeros((x.shape[0], self.num_classes))
        for _ in range(self.samples):
            masks = self.sample_noise(rng, x.shape[0])
            total += softmax(self._forward(x, masks)[0])
        return total / self.samples

    def hyperparams(self):
        return {"hidden": list(self.hidden), "rate": self.rate, "samples": self.samples}

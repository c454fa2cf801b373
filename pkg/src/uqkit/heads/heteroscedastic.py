"""Heteroscedastic output layer: a Gaussian over the logits with
input-dependent low-rank-plus-diagonal covariance.

A logit sample for input x is

    z = (mu(x) + V(x) eps1 + d(x) * eps2) / tau,   eps1 ~ N(0, I_R), eps2 ~ N(0, I_K)

and the predictive distribution is the Monte-Carlo average of softmax(z).
Training maximizes log of the averaged probability with the pathwise
(reparameterized) estimator, so gradients flow through the noise samples;
gradient checks pass the same draws to both sides.
"""

from __future__ import annotations

import numpy as np

from .base import PROB_EPS, Head, softmax


def default_rank(num_classes: int) -> int:
    return min(num_classes - 1, 15)


class HeteroscedasticHead(Head):
    kind = "heteroscedastic"

    def __init__(
        self,
        dim: int,
        num_classes: int,
        seed: int = 0,
        rank: int | None = None,
        temperature: float = 1.0,
        train_samples: int = 10,
        eval_samples: int = 1000,
    ):
        super().__init__(dim, num_classes, seed)
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.rank = default_rank(num_classes) if rank is None else int(rank)
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        self.temperature = float(temperature)
        self.train_samples = int(train_samples)
        self.eval_samples = int(eval_samples)
        rng = np.random.default_rng(seed)
        self.w_mu = rng.standard_normal((dim, num_classes)) / np.sqrt(dim)
        self.b_mu = np.zeros(num_classes)
        init = 1e-2 / np.sqrt(dim)
        self.v = init * rng.standard_normal((dim, num_classes, self.rank))
        self.d = init * rng.standard_normal((dim, num_classes))

    def params(self):
        return {"w_mu": self.w_mu, "b_mu": self.b_mu, "v": self.v, "d": self.d}

    def sample_noise(self, rng, n):
        return (
            rng.standard_normal((n, self.train_samples, self.rank)),
            rng.standard_normal((n, self.train_samples, self.num_classes)),
        )

    def _logit_samples(self, x, eps1, eps2):
        mu = x @ self.w_mu + self.b_mu                       # (N, K)
        vx = np.einsum("nd,dkr->nkr", x, self.v)             # (N, K, R)
        dx = x @ self.d                                      # (N, K)
        z = mu[:, None, :] + np.einsum("nkr,nsr->nsk", vx, eps1) + dx[:, None, :] * eps2
        return z / self.temperature

    def loss_and_grads(self, x, y, noise=None):
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        if noise is None:
            noise = self.sample_noise(np.random.default_rng(self.seed), n)
        eps1, eps2 = noise
        s = eps2.shape[1]
        z = self._logit_samples(x, eps1, eps2)               # (N, S, K)
        p = softmax(z)
        pbar_y = np.clip(p[np.arange(n), :, y].mean(axis=1), PROB_EPS, 1.0)
        loss = float(-np.mean(np.log(pbar_y)))

        # dL/dz for the log-of-averaged-probability objective:
        # dL/dz_ns = c_ns * (onehot_y - p_ns) with c_ns = -p_ns[y] / (N S pbar_y).
        p_y = p[np.arange(n), :, y]                          # (N, S)
        c = -(p_y / pbar_y[:, None]) / (n * s)               # (N, S)
        g = -c[:, :, None] * p
        g[np.arange(n), :, y] += c
        g /= self.temperature

        g_sum = g.sum(axis=1)                                # (N, K)
        grads = {
            "w_mu": x.T @ g_sum,
            "b_mu": g_sum.sum(axis=0),
            "v": np.einsum("nd,nkr->dkr", x, np.einsum("nsk,nsr->nkr", g, eps1)),
            "d": x.T @ (g * eps2).sum(axis=1),
        }
        return loss, grads

    def predict_probs(self, x, seed=None):
        """MC average of softmax over eval_samples draws from a seeded stream."""
        x = np.asarray(x, dtype=np.float64)
        if not (self.v.any() or self.d.any()):
            # point mass over logits: the MC average is exactly the softmax
            return softmax((x @ self.w_mu + self.b_mu) / self.temperature)
        rng = self._prediction_rng(seed)
        n = x.shape[0]
        total = np.zeros((n, self.num_classes))
        remaining = self.eval_samples
        # chunked so eval_samples can be large without blowing up memory
        while remaining > 0:
            s = min(remaining, 2048)
            eps1 = rng.standard_normal((n, s, self.rank))
            eps2 = rng.standard_normal((n, s, self.num_classes))
            total += softmax(self._logit_samples(x, eps1, eps2)).sum(axis=1)
            remaining -= s
        return total / self.eval_samples

    def hyperparams(self):
        return {
            "rank": self.rank,
            "temperature": self.temperature,
            "train_samples": self.train_samples,
            "eval_samples": self.eval_samples,
        }


TEMPERATURE_GRID = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)


def tune_temperature(x_train, y_train, x_val, y_val, cfg, grid=TEMPERATURE_GRID,
                     **hyper) -> "HeteroscedasticHead":
    """Train one head per temperature in the grid and keep the one with the
    lowest validation NLL (first winner on ties, so tuning is deterministic)."""
    from ..metrics import PredictionBatch, nll
    from .training import train_head

    best = None
    best_nll = np.inf
    for temperature in grid:
        head = train_head("heteroscedastic", x_train, y_train, cfg,
                          temperature=float(temperature), **hyper)
        val_nll = nll(PredictionBatch(head.predict_probs(x_val), y_val))
        if val_nll < best_nll:
            best, best_nll = head, val_nll
    best.val_nll = best_nll
    return best

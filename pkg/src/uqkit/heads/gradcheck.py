"""Finite-difference verification of every head's analytic gradients.

The check perturbs each parameter component in place and compares central
differences against loss_and_grads on an identical fixed noise draw, so
stochastic losses (heteroscedastic sampling, dropout masks) see exactly the
same randomness on both sides.
"""

from __future__ import annotations

import numpy as np

from .base import Head


def analytic_gradients(head: Head, x, y, noise=None) -> dict[str, np.ndarray]:
    return head.loss_and_grads(np.asarray(x, dtype=np.float64), y, noise)[1]


def gradient_check(head: Head, x, y, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error for one component is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|), so a vanishing gradient cannot inflate
    the ratio; the maximum runs over every component of every parameter.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    noise = head.sample_noise(rng, x.shape[0])
    _, grads = head.loss_and_grads(x, y, noise)

    worst = 0.0
    for name, p in head.params().items():
        analytic = np.asarray(grads[name]).reshape(-1)
        for i in range(p.size):
            orig = p.flat[i]
            p.flat[i] = orig + h
            up = head.loss(x, y, noise)
            p.flat[i] = orig - h
            down = head.loss(x, y, noise)
            p.flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst

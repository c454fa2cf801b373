"""Multinomial logistic regression fitted with L-BFGS.

Minimizes mean cross-entropy plus (l2/2) ||W||_F^2, bias unpenalized. With
l2 = 0 the optimum runs off to infinity on separable data, so a linear
program first decides separability exactly; a separable unregularized fit
warns and runs with a capped iteration budget instead of chasing tol.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import optimize

from ..errors import ValidationError
from .base import softmax
from .linear import LinearSoftmaxHead

SEPARABLE_ITER_CAP = 200
SEPARABILITY_CHECK_LIMIT = 200_000  # constraint count above which we skip the LP


def multinomial_loss_grad(theta, x, y, l2, dim, k):
    """Mean CE + (l2/2)||W||^2 and its gradient in the flattened parameters."""
    n = x.shape[0]
    w = theta[: dim * k].reshape(dim, k)
    b = theta[dim * k :]
    z = x @ w + b
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), y]) + 0.5 * l2 * np.sum(w * w))
    p = softmax(z)
    p[np.arange(n), y] -= 1.0
    p /= n
    grad_w = x.T @ p + l2 * w
    grad_b = p.sum(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


def is_linearly_separable(x: np.ndarray, y: np.ndarray, num_classes: int) -> bool:
    """Exact multiclass separability test via an LP feasibility problem.

    Feasible iff some (W, b) satisfies, for every example n and wrong class c,
    (w_y - w_c)^T x_n + b_y - b_c >= 1.
    """
    n, dim = x.shape
    k = num_classes
    a_ub = np.zeros((n * (k - 1), dim * k + k))
    row = 0
    for i in range(n):
        yi = int(y[i])
        for c in range(k):
            if c == yi:
                continue
            a_ub[row, yi * dim : (yi + 1) * dim] = -x[i]
            a_ub[row, c * dim : (c + 1) * dim] = x[i]
            a_ub[row, dim * k + yi] = -1.0
            a_ub[row, dim * k + c] = 1.0
            row += 1
    b_ub = -np.ones(row)
    res = optimize.linprog(
        c=np.zeros(dim * k + k),
        A_ub=a_ub[:row],
        b_ub=b_ub,
        bounds=(None, None),
        method="highs",
    )
    return res.status == 0


def lbfgs_logreg(
    embeddings,
    labels,
    l2: float = 1e-4,
    max_iters: int = 1000,
    tol: float = 1e-8,
    num_classes: int | None = None,
) -> LinearSoftmaxHead:
    """Fit a LinearSoftmaxHead by L-BFGS from a zero initialization.

    The returned head carries a fit_info dict with the iteration count, final
    projected-gradient norm, convergence status, and any warnings. Line-search
    failures are reported there with the last iterate returned.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError(f"embeddings {x.shape} / labels {y.shape} mismatch")
    if l2 < 0:
        raise ValidationError(f"l2 must be >= 0, got {l2}")
    dim = x.shape[1]
    k = int(num_classes) if num_classes is not None else int(y.max()) + 1

    notes = []
    iters = max_iters
    if l2 == 0.0:
        if x.shape[0] * (k - 1) > SEPARABILITY_CHECK_LIMIT:
            notes.append("separability pre-check skipped (problem too large)")
        elif is_linearly_separable(x, y, k):
            warnings.warn(
                "unregularized logistic regression on separable data has no "
                "finite optimum; capping iterations",
                stacklevel=2,
            )
            notes.append("separable with l2=0; iterations capped")
            iters = min(max_iters, SEPARABLE_ITER_CAP)

    theta0 = np.zeros(dim * k + k)
    res = optimize.minimize(
        multinomial_loss_grad,
        theta0,
        args=(x, y, l2, dim, k),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": iters, "gtol": tol, "ftol": 1e-18, "maxcor": 20},
    )
    if not res.success:
        notes.append(f"optimizer stopped early: {res.message}")

    head = LinearSoftmaxHead(dim, k, seed=0)
    head.w[...] = res.x[: dim * k].reshape(dim, k)
    head.b[...] = res.x[dim * k :]
    head.train_loss = float(res.fun)
    head.fit_info = {
        "converged": bool(res.success),
        "iterations": int(res.nit),
        "grad_inf_norm": float(np.abs(res.jac).max()),
        "notes": notes,
    }
    return head

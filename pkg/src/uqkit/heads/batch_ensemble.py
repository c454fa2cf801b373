"""BatchEnsemble head: a small MLP whose M members share one weight matrix
per layer, individualized by rank-1 fast weights.

Member i's effective weight is W0 * (r_i s_i^T) (Hadamard product), realized
as ((h * r_i) @ W0) * s_i without ever materializing the per-member matrix.
Fast weights apply to every layer; per-layer memory overhead over the shared
model is therefore Theta(M * (rows + cols)), never Theta(M * rows * cols).
Members see the same mini-batches and train on the mean of their own
cross-entropies; prediction averages member probabilities.
"""

from __future__ import annotations

import numpy as np

from .base import PROB_EPS, Head, softmax


class _BELayer:
    def __init__(self, rng, n_in, n_out, members):
        self.w0 = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        # random sign fast weights: members start as sign-flipped variants
        self.r = rng.choice([-1.0, 1.0], size=(members, n_in))
        self.s = rng.choice([-1.0, 1.0], size=(members, n_out))
        self.b = np.zeros((members, n_out))

    def forward(self, h):
        """h: (M, N, in) -> (M, N, out), with the per-member intermediates
        needed for backprop."""
        u = h * self.r[:, None, :]
        p = u @ self.w0
        return p * self.s[:, None, :] + self.b[:, None, :], (h, u, p)

    def backward(self, da, cache):
        h, u, p = cache
        grads = {
            "b": da.sum(axis=1),
            "s": (p * da).sum(axis=1),
        }
        dp = da * self.s[:, None, :]
        grads["w0"] = np.einsum("mni,mno->io", u, dp)
        du = dp @ self.w0.T
        grads["r"] = (h * du).sum(axis=1)
        dh = du * self.r[:, None, :]
        return dh, grads

    def param_items(self, prefix):
        return {
            f"{prefix}.w0": self.w0,
            f"{prefix}.r": self.r,
            f"{prefix}.s": self.s,
            f"{prefix}.b": self.b,
        }


class _SharedLayer:
    def __init__(self, rng, n_in, n_out):
        self.w = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        self.b = np.zeros(n_out)

    def forward(self, h):
        return h @ self.w + self.b, (h,)

    def backward(self, da, cache):
        (h,) = cache
        grads = {"w": np.einsum("mni,mno->io", h, da), "b": da.sum(axis=(0, 1))}
        return da @ self.w.T, grads

    def param_items(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class BatchEnsembleHead(Head):
    kind = "batch_ensemble"

    def __init__(
        self,
        dim: int,
        num_classes: int,
        seed: int = 0,
        hidden: tuple[int, ...] = (16,),
        members: int = 4,
        shared_output: bool = False,
    ):
        super().__init__(dim, num_classes, seed)
        if members < 1:
            raise ValueError("members must be >= 1")
        self.hidden = tuple(int(h) for h in hidden)
        self.members = int(members)
        self.shared_output = bool(shared_output)
        rng = np.random.default_rng(seed)
        sizes = (dim, *self.hidden, num_classes)
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            is_output = i == len(sizes) - 2
            if is_output and self.shared_output:
                self.layers.append(_SharedLayer(rng, n_in, n_out))
            else:
                self.layers.append(_BELayer(rng, n_in, n_out, self.members))

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.param_items(f"layer{i}"))
        return out

    def _forward(self, x):
        h = np.broadcast_to(x, (self.members, *x.shape))
        caches, activations = [], []
        for i, layer in enumerate(self.layers):
            a, cache = layer.forward(h)
            caches.append(cache)
            if i < len(self.layers) - 1:
                h = np.tanh(a)
                activations.append(h)
            else:
                h = a
                activations.append(None)
        return h, caches, activations

    def member_logits(self, x) -> np.ndarray:
        """(M, N, K) logits, one slab per ensemble member."""
        x = np.asarray(x, dtype=np.float64)
        return self._forward(x)[0]

    def loss_and_grads(self, x, y, noise=None):
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        logits, caches, activations = self._forward(x)
        p = softmax(logits)                                   # (M, N, K)
        picked = np.clip(p[:, np.arange(n), y], PROB_EPS, 1.0)
        loss = float(-np.mean(np.log(picked)))                # mean member CE
        da = p.copy()
        da[:, np.arange(n), y] -= 1.0
        da /= self.members * n
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(len(self.layers))):
            if i < len(self.layers) - 1:
                da = da * (1.0 - activations[i] ** 2)         # back through tanh
            da, layer_grads = self.layers[i].backward(da, caches[i])
            for name, g in layer_grads.items():
                grads[f"layer{i}.{name}"] = g
        return loss, grads

    def predict_probs(self, x, seed=None):
        return softmax(self.member_logits(x)).mean(axis=0)

    def num_params(self) -> int:
        return sum(v.size for v in self.params().values())

    def hyperparams(self):
        return {
            "hidden": list(self.hidden),
            "members": self.members,
            "shared_output": self.shared_output,
        }

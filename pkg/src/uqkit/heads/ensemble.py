"""Deep ensemble of independently trained heads, combined by the arithmetic
mean of member probabilities."""

from __future__ import annotations

import numpy as np

from .base import Head


class EnsembleHead(Head):
    kind = "ensemble"

    def __init__(self, members: list[Head]):
        if not members:
            raise ValueError("ensemble needs at least one member")
        k = members[0].num_classes
        if any(m.num_classes != k for m in members):
            raise ValueError("ensemble members must share the class count")
        super().__init__(members[0].dim, k, members[0].seed)
        self.members = list(members)

    def params(self):
        out = {}
        for i, member in enumerate(self.members):
            out.update({f"member{i}.{k}": v for k, v in member.params().items()})
        return out

    def predict_probs(self, x, seed=None):
        total = np.zeros((np.asarray(x).shape[0], self.num_classes))
        for member in self.members:
            total += member.predict_probs(x, seed=seed)
        return total / len(self.members)

    def hyperparams(self):
        return {"num_members": len(self.members)}

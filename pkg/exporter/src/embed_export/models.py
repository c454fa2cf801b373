"""Encoder resolvers.

`torchvision:<name>` builds any torchvision classification model whose
classifier ends in a Linear layer. Embeddings are the pre-logits features
(the input of that last Linear), captured with a forward hook; logits are
its output. Without --weights the model keeps its seeded random
initialization, which is enough for contract tests and offline smoke runs.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn


class Encoder:
    def __init__(self, model: nn.Module, last_linear: nn.Linear):
        self.model = model.eval()
        self.num_model_classes = last_linear.out_features
        self.embedding_dim = last_linear.in_features
        self._captured: dict = {}
        last_linear.register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        self._captured["embeddings"] = inputs[0].detach()
        self._captured["logits"] = output.detach()

    @torch.no_grad()
    def encode(self, batch: torch.Tensor):
        """Returns (embeddings, logits) float32 arrays for one image batch."""
        self._captured.clear()
        self.model(batch)
        emb = self._captured["embeddings"].reshape(batch.shape[0], -1)
        logits = self._captured["logits"]
        return emb.numpy().astype("float32"), logits.numpy().astype("float32")


def resolve_model(model_id: str, weights: str | None, seed: int) -> Encoder:
    kind, _, name = model_id.partition(":")
    if kind != "torchvision" or not name:
        raise ValueError(
            f"unknown model id {model_id!r}; expected torchvision:<name>"
        )
    from torchvision import models

    torch.manual_seed(seed)
    try:
        model = models.get_model(name, weights=None)
    except ValueError as exc:
        raise ValueError(f"cannot resolve torchvision model {name!r}: {exc}") from exc
    if weights is not None:
        state = torch.load(Path(weights), map_location="cpu", weights_only=True)
        model.load_state_dict(state)

    last_linear = None
    for module in model.modules():
        if isinstance(module, nn.Linear):
            last_linear = module
    if last_linear is None:
        raise ValueError(
            f"model {name!r} has no Linear classifier; cannot take pre-logits features"
        )
    return Encoder(model, last_linear)

"""Thin adapter: run a pretrained encoder over an image dataset and write
embeddings, logits, and labels in the UBT + manifest format."""

__version__ = "0.1.0"

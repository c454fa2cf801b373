"""Reliability evaluation for classifiers on frozen embeddings, plus
trainable last-layer uncertainty heads."""

__version__ = "0.1.0"

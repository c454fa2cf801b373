"""Trainable last-layer uncertainty heads over frozen embeddings."""

from .base import Head, softmax
from .batch_ensemble import BatchEnsembleHead
from .ensemble import EnsembleHead
from .fewshot import fewshot_sample
from .gradcheck import analytic_gradients, gradient_check
from .heteroscedastic import HeteroscedasticHead, tune_temperature
from .linear import LinearSoftmaxHead
from .logreg import is_linearly_separable, lbfgs_logreg
from .mc_dropout import MCDropoutHead
from .rfgp import RFGPHead, gp_posterior_variance
from .serialize import load_head, save_head
from .training import HEAD_KINDS, TrainConfig, make_head, train_head

__all__ = [
    "HEAD_KINDS",
    "BatchEnsembleHead",
    "EnsembleHead",
    "Head",
    "HeteroscedasticHead",
    "LinearSoftmaxHead",
    "MCDropoutHead",
    "RFGPHead",
    "TrainConfig",
    "analytic_gradients",
    "fewshot_sample",
    "gp_posterior_variance",
    "gradient_check",
    "is_linearly_separable",
    "lbfgs_logreg",
    "load_head",
    "make_head",
    "save_head",
    "softmax",
    "train_head",
    "tune_temperature",
]

"""Per-example uncertainty scores for open-set recognition.

Higher always means more likely out-of-distribution. Softmax- and
logit-based scores work per row; distance-based scores go through a
fitted GaussianClassModel. All distance math runs in float64 via
Cholesky solves; the shared covariance inverse is never formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateMetricError, ValidationError
from .metrics import binary_auprc, binary_auroc

PROB_ROW_TOL = 1e-5


def _rows(probs) -> np.ndarray:
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if p.ndim != 2:
        raise ValidationError(f"expected rows of probabilities, got shape {p.shape}")
    if p.min() < 0 or np.abs(p.sum(axis=1) - 1.0).max() > PROB_ROW_TOL:
        raise ValidationError("rows must be probability distributions")
    return p


def msp_score(probs):
    """1 - max softmax probability."""
    p = _rows(probs)
    out = 1.0 - p.max(axis=1)
    return float(out[0]) if np.asarray(probs).ndim == 1 else out


def entropy_score(probs):
    """Shannon entropy of the row, with 0 log 0 = 0."""
    p = _rows(probs)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = -terms.sum(axis=1)
    return float(out[0]) if np.asarray(probs).ndim == 1 else out


def maxlogit_score(logits):
    """Negative of the maximum unnormalized logit."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    out = -z.max(axis=1)
    return float(out[0]) if np.asarray(logits).ndim == 1 else out


@dataclass(frozen=True)
class SequenceDistribution:
    """Per-step conditional distributions of one decoded sequence."""

    step_probs: np.ndarray
    length: int

    def __post_init__(self):
        p = np.asarray(self.step_probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValidationError("step_probs must be [L x K]")
        if not 1 <= self.length <= p.shape[0]:
            raise ValidationError(f"length {self.length} outside [1, {p.shape[0]}]")
        _rows(p)
        object.__setattr__(self, "step_probs", p)


def sequence_entropy_score(seq: SequenceDistribution) -> float:
    """Mean per-step conditional entropy over the effective length.

    Padding steps beyond `length` are excluded. Returned as a magnitude,
    higher = more uncertain.
    """
    ent = entropy_score(seq.step_probs[: seq.length])
    return float(np.mean(np.atleast_1d(ent)))


@dataclass(frozen=True)
class GaussianClassModel:
    """Per-class Gaussians with one shared covariance, plus a class-agnostic
    background Gaussian. Cholesky factors are of the ridge-regularized
    covariances; the same ridge is applied to both."""

    means: np.ndarray          # [K x D]
    shared_cov: np.ndarray     # [D x D]
    bg_mean: np.ndarray        # [D]
    bg_cov: np.ndarray         # [D x D]
    chol: np.ndarray           # lower Cholesky of shared_cov + reg*I
    bg_chol: np.ndarray        # lower Cholesky of bg_cov + reg*I
    reg: float
    counts: np.ndarray         # [K]

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def fit_class_gaussians(embeddings, labels, reg: float | None = None,
                        num_classes: int | None = None) -> GaussianClassModel:
    """Fit per-class means with a shared covariance, and a background Gaussian
    over all data ignoring labels.

    The shared covariance pools within-class scatter: (1/N) sum over classes of
    sum over members of (z - mean_k)(z - mean_k)^T. By default the ridge is
    1e-6 * trace(shared_cov) / D, applied identically to both covariances.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ValidationError(f"embeddings {z.shape} / labels {y.shape} mismatch")
    n, d = z.shape
    k = int(num_classes) if num_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= k:
        raise ValidationError("label id out of range")
    if n <= d:
        warnings.warn(
            f"fitting {d}-dim Gaussians from only {n} examples; "
            "covariance will be rank-deficient",
            stacklevel=2,
        )

    means = np.empty((k, d))
    counts = np.zeros(k, dtype=np.int64)
    scatter = np.zeros((d, d))
    for c in range(k):
        zc = z[y == c]
        counts[c] = zc.shape[0]
        if counts[c] == 0:
            raise ValidationError(f"class {c} has no examples")
        means[c] = zc.mean(axis=0)
        centered = zc - means[c]
        scatter += centered.T @ centered
    shared_cov = scatter / n

    bg_mean = z.mean(axis=0)
    centered = z - bg_mean
    bg_cov = centered.T @ centered / n

    if reg is None:
        reg = 1e-6 * float(np.trace(shared_cov)) / d
    reg = float(reg)

    def _chol(cov, what):
        try:
            return linalg.cholesky(cov + reg * np.eye(d), lower=True)
        except linalg.LinAlgError as exc:
            raise ValidationError(
                f"{what} covariance not positive-definite with ridge {reg:g}"
            ) from exc

    return GaussianClassModel(
        means=means,
        shared_cov=shared_cov,
        bg_mean=bg_mean,
        bg_cov=bg_cov,
        chol=_chol(shared_cov, "shared"),
        bg_chol=_chol(bg_cov, "background"),
        reg=reg,
        counts=counts,
    )


def _sq_mahalanobis(chol: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Squared distances delta^T (L L^T)^-1 delta for each row of deltas."""
    w = linalg.solve_triangular(chol, deltas.T, lower=True)
    return np.sum(w * w, axis=0)


def mahalanobis_score(model: GaussianClassModel, z) -> float | np.ndarray:
    """Minimum squared Mahalanobis distance to any class Gaussian.

    Kept in squared form (no square root); zero at every class mean.
    """
    single = np.asarray(z).ndim == 1
    zz = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if zz.shape[1] != model.dim:
        raise ValidationError(f"dimension mismatch: {zz.shape[1]} != {model.dim}")
    dists = np.empty((model.num_classes, zz.shape[0]))
    for c in range(model.num_classes):
        dists[c] = _sq_mahalanobis(model.chol, zz - model.means[c])
    out = dists.min(axis=0)
    return float(out[0]) if single else out


def background_mahalanobis_score(model: GaussianClassModel, z) -> float | np.ndarray:
    """Squared distance to the class-agnostic background Gaussian."""
    single = np.asarray(z).ndim == 1
    zz = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if zz.shape[1] != model.dim:
        raise ValidationError(f"dimension mismatch: {zz.shape[1]} != {model.dim}")
    out = _sq_mahalanobis(model.bg_chol, zz - model.bg_mean)
    return float(out[0]) if single else out


def relative_mahalanobis_score(model: GaussianClassModel, z) -> float | np.ndarray:
    """Class distance minus background distance; corrects for directions of
    variation shared by all of the training data."""
    md = mahalanobis_score(model, z)
    md0 = background_mahalanobis_score(model, z)
    return md - md0


def dump_scores(scores, path) -> None:
    """Write per-example scores as a UBT [N] f64 tensor for external analysis.

    Scores may be raw (e.g. negative MaxLogit values), so finiteness
    enforcement is relaxed.
    """
    from .tensors import save_tensor

    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    save_tensor(arr, path, raw_scores=True)


def osr_evaluate(in_scores, out_scores) -> dict[str, float]:
    """AUROC/AUPRC of a score separating OOD (positive) from in-distribution."""
    s_in = np.asarray(in_scores, dtype=np.float64)
    s_out = np.asarray(out_scores, dtype=np.float64)
    if s_in.size == 0 or s_out.size == 0:
        raise DegenerateMetricError("osr_evaluate needs non-empty score sets")
    scores = np.concatenate([s_in, s_out])
    positives = np.concatenate(
        [np.zeros(s_in.size, dtype=bool), np.ones(s_out.size, dtype=bool)]
    )
    return {
        "auroc": binary_auroc(scores, positives),
        "auprc": binary_auprc(scores, positives),
    }

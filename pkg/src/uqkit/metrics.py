"""Scalar reliability metrics and curves over probabilities and labels.

All functions are pure and operate on immutable inputs. Conventions used
throughout, chosen for determinism across runs:

* argmax ties break toward the lowest class index;
* referral / rejection sets order examples by (uncertainty desc, index asc),
  so score ties break toward the lowest example index;
* probabilities are clamped to [1e-12, 1] before any log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMetricError, ValidationError

PROB_EPS = 1e-12
PROB_ROW_TOL = 1e-5
BOUNDS_TOL = 1e-9
DEFAULT_ECE_BINS = 15


@dataclass(frozen=True)
class PredictionBatch:
    """Predicted class probabilities with ground-truth labels.

    probs is [N x K] with non-negative rows summing to 1 within 1e-5;
    soft_labels, when present, is a per-example label distribution.
    """

    probs: np.ndarray
    labels: np.ndarray
    soft_labels: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels)
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise ValidationError(f"probs must be [N x K] with N >= 1, got {probs.shape}")
        if labels.shape != (probs.shape[0],):
            raise ValidationError(
                f"labels shape {labels.shape} != ({probs.shape[0]},)"
            )
        if probs.min() < 0:
            raise ValidationError("negative probability")
        sums = probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > PROB_ROW_TOL:
            i = int(np.abs(sums - 1.0).argmax())
            raise ValidationError(f"probs row {i} sums to {sums[i]:.6g}")
        if labels.min() < 0 or labels.max() >= probs.shape[1]:
            raise ValidationError("label id out of range")
        if self.soft_labels is not None and np.asarray(self.soft_labels).shape != probs.shape:
            raise ValidationError("soft_labels shape mismatch")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def num_examples(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def predictions(self) -> np.ndarray:
        """Argmax class per row; ties go to the lowest class index."""
        return self.probs.argmax(axis=1)

    def confidences(self) -> np.ndarray:
        return self.probs.max(axis=1)

    def correct(self) -> np.ndarray:
        return self.predictions() == self.labels


@dataclass(frozen=True)
class MetricRecord:
    """One (task, dataset, split, metric, value) result.

    Bounds and orientation drive reliability-score normalization. The value
    is stored verbatim; `clamped` marks values that fell outside the bounds
    (normalization clips them).
    """

    task: str
    dataset: str
    split: str
    metric: str
    value: float
    higher_is_better: bool
    lower_bound: float
    upper_bound: float
    head: str = ""
    flags: tuple[str, ...] = ()
    clamped: bool = field(init=False)

    def __post_init__(self):
        if not self.lower_bound < self.upper_bound:
            raise ValidationError(
                f"record {self.metric}: bounds [{self.lower_bound}, {self.upper_bound}]"
            )
        outside = self.value < self.lower_bound or self.value > self.upper_bound
        object.__setattr__(self, "clamped", bool(outside))

    def bounds_violation(self) -> float:
        return max(self.lower_bound - self.value, self.value - self.upper_bound, 0.0)

    def normalized(self) -> float:
        """Affine map onto [0, 100] with 100 = best, after clipping into bounds."""
        v = min(max(self.value, self.lower_bound), self.upper_bound)
        frac = (v - self.lower_bound) / (self.upper_bound - self.lower_bound)
        if not self.higher_is_better:
            frac = 1.0 - frac
        return 100.0 * frac


@dataclass(frozen=True)
class CurvePoint:
    x: float
    y: float


def accuracy(batch: PredictionBatch) -> float:
    return float(batch.correct().mean())


def nll(batch: PredictionBatch) -> float:
    """Mean negative log probability of the true label."""
    p = np.clip(batch.probs[np.arange(batch.num_examples), batch.labels], PROB_EPS, 1.0)
    return float(-np.mean(np.log(p)))


def brier(batch: PredictionBatch) -> float:
    """Mean over examples of the squared distance to the one-hot label."""
    onehot = np.zeros_like(batch.probs)
    onehot[np.arange(batch.num_examples), batch.labels] = 1.0
    return float(np.mean(np.sum((batch.probs - onehot) ** 2, axis=1)))


def ece(batch: PredictionBatch, num_bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins on [0, 1].

    A confidence of exactly 1.0 falls in the last bin; empty bins contribute 0.
    """
    if num_bins < 1:
        raise ValidationError(f"num_bins must be >= 1, got {num_bins}")
    conf = batch.confidences()
    correct = batch.correct().astype(np.float64)
    idx = np.minimum((conf * num_bins).astype(np.int64), num_bins - 1)
    n = batch.num_examples
    total = 0.0
    for b in range(num_bins):
        mask = idx == b
        nb = int(mask.sum())
        if nb == 0:
            continue
        total += (nb / n) * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def _as_score_arrays(scores, positives) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    p = np.asarray(positives, dtype=bool)
    if s.ndim != 1 or s.shape != p.shape:
        raise ValidationError(f"scores {s.shape} / positives {p.shape} mismatch")
    return s, p


def binary_auroc(scores, positives) -> float:
    """AUROC as the tie-aware rank statistic P(s+ > s-) + 0.5 P(s+ = s-)."""
    s, pos = _as_score_arrays(scores, positives)
    n_pos = int(pos.sum())
    n_neg = int(s.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError(
            f"AUROC needs both classes, got {n_pos} positives / {n_neg} negatives"
        )
    ranks = _midranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _midranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their run."""
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auprc(scores, positives) -> float:
    """Average precision: mean of precision at each positive, examples taken
    in descending score order with ties broken by stable input index."""
    s, pos = _as_score_arrays(scores, positives)
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == s.size:
        raise DegenerateMetricError(
            f"AUPRC needs both classes, got {n_pos} positives of {s.size}"
        )
    order = np.argsort(-s, kind="stable")
    hits = pos[order].astype(np.float64)
    precision = np.cumsum(hits) / np.arange(1, s.size + 1)
    return float(precision[hits == 1.0].sum() / n_pos)


def calibration_auroc(batch: PredictionBatch) -> float:
    """AUROC of uncertainty (1 - max probability) predicting incorrectness."""
    incorrect = ~batch.correct()
    if incorrect.all() or not incorrect.any():
        raise DegenerateMetricError(
            "calibration AUROC needs both correct and incorrect predictions"
        )
    return binary_auroc(1.0 - batch.confidences(), incorrect)


def _referral_order(uncertainty: np.ndarray) -> np.ndarray:
    """Example indices from most to least uncertain, ties by lowest index."""
    return np.argsort(-np.asarray(uncertainty, dtype=np.float64), kind="stable")


def oracle_collaborative_accuracy(
    batch: PredictionBatch, uncertainty, budget: float
) -> float:
    """Accuracy when the floor(budget*N) most-uncertain predictions are
    referred to a perfect oracle and the rest scored by argmax."""
    if not 0.0 <= budget <= 1.0:
        raise ValidationError(f"budget must be in [0, 1], got {budget}")
    n = batch.num_examples
    n_refer = int(math.floor(budget * n))
    correct = batch.correct().copy()
    correct[_referral_order(uncertainty)[:n_refer]] = True
    return float(correct.mean())


def oracle_collaborative_auroc(
    batch: PredictionBatch, uncertainty, budget: float
) -> float:
    """AUROC of uncertainty predicting post-referral incorrectness.

    The referral mechanism follows oracle_collaborative_accuracy; scoring the
    post-referral correctness set with AUROC is this library's interpretation,
    and callers should flag records accordingly.
    """
    if not 0.0 <= budget <= 1.0:
        raise ValidationError(f"budget must be in [0, 1], got {budget}")
    u = np.asarray(uncertainty, dtype=np.float64)
    n_refer = int(math.floor(budget * batch.num_examples))
    correct = batch.correct().copy()
    correct[_referral_order(u)[:n_refer]] = True
    if correct.all() or not correct.any():
        raise DegenerateMetricError("post-referral set has a single correctness class")
    return binary_auroc(u, ~correct)


def rejection_curve(
    batch: PredictionBatch,
    uncertainty,
    metric: str = "accuracy",
    rates=None,
) -> tuple[list[CurvePoint], list[str]]:
    """Metric on the retained least-uncertain examples at each rejection rate.

    At rate tau the floor(tau*N) most-uncertain examples are dropped. Returns
    the curve plus a note per omitted point (degenerate retained set for
    auroc/auprc). Rates must be sorted, within [0, 0.99].
    """
    if metric not in ("accuracy", "auroc", "auprc"):
        raise ValidationError(f"unknown rejection metric {metric!r}")
    if rates is None:
        rates = default_rejection_rates()
    rates = [float(r) for r in rates]
    if any(b <= a for a, b in zip(rates, rates[1:])) or not rates:
        raise ValidationError("rates must be non-empty and strictly increasing")
    if rates[0] < 0.0 or rates[-1] > 0.99:
        raise ValidationError("rates must lie within [0, 0.99]")
    if metric in ("auroc", "auprc") and batch.num_classes != 2:
        raise ValidationError(f"{metric} rejection curve requires a binary task")

    order = _referral_order(uncertainty)
    n = batch.num_examples
    points: list[CurvePoint] = []
    omitted: list[str] = []
    for tau in rates:
        keep = order[int(math.floor(tau * n)) :]
        if keep.size == 0:
            omitted.append(f"rate {tau:g}: empty retained set")
            continue
        sub_correct = batch.correct()[keep]
        if metric == "accuracy":
            points.append(CurvePoint(tau, float(sub_correct.mean())))
            continue
        pos = batch.labels[keep] == 1
        scores = batch.probs[keep, 1]
        try:
            fn = binary_auroc if metric == "auroc" else binary_auprc
            points.append(CurvePoint(tau, fn(scores, pos)))
        except DegenerateMetricError as exc:
            omitted.append(f"rate {tau:g}: {exc}")
    return points, omitted


def rejection_auc(points: list[CurvePoint]) -> float:
    """Trapezoid-rule area under a rejection curve."""
    if len(points) < 2:
        raise ValidationError("rejection AUC needs at least 2 curve points")
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    if np.any(np.diff(xs) <= 0):
        raise ValidationError("curve points must be strictly increasing in x")
    return float(np.trapezoid(ys, xs))


def default_rejection_rates(count: int = 100) -> list[float]:
    """Evenly spaced rejection rates covering 0% through 99%."""
    return [float(x) for x in np.linspace(0.0, 0.99, count)]


def label_uncertainty_kl(batch: PredictionBatch) -> float:
    """Mean KL(label distribution || model distribution) per example.

    Model probabilities are clamped to 1e-12; zero-mass label entries
    contribute nothing, so the value is always finite.
    """
    if batch.soft_labels is None:
        raise ValidationError("label_uncertainty_kl requires soft_labels")
    p_data = np.asarray(batch.soft_labels, dtype=np.float64)
    p_model = np.clip(batch.probs, PROB_EPS, 1.0)
    ratio = np.zeros_like(p_data)
    nz = p_data > 0
    ratio[nz] = p_data[nz] * (np.log(p_data[nz]) - np.log(p_model[nz]))
    return float(ratio.sum(axis=1).mean())


def subpopulation_percentiles(
    per_group_metric: dict, percentiles=(5, 25, 50, 75, 95)
) -> dict[float, float]:
    """Linear-interpolation percentiles of the per-group metric values."""
    if not per_group_metric:
        raise ValidationError("need at least one group")
    values = np.sort(np.array(list(per_group_metric.values()), dtype=np.float64))
    return {
        float(q): float(np.percentile(values, q, method="linear")) for q in percentiles
    }


def nll_upper_bound(num_classes: int) -> float:
    """Normalization bound for NLL: the uniform predictor's loss, ln K."""
    return math.log(num_classes)


def kl_upper_bound() -> float:
    """Largest label-uncertainty KL reachable under the 1e-12 probability clamp."""
    return -math.log(PROB_EPS)


def reliability_score(records: list[MetricRecord]) -> float:
    """Unweighted mean of metric values normalized onto [0, 100].

    Each value maps affinely onto [0, 100] using its record's bounds, with the
    orientation flipped where lower is better, so 100 is always best. Raises
    if any value sits outside its bounds by more than 1e-9.
    """
    if not records:
        raise ValidationError("reliability score needs at least one record")
    total = 0.0
    for rec in records:
        if rec.bounds_violation() > BOUNDS_TOL:
            raise ValidationError(
                f"record {rec.metric}: value {rec.value} outside bounds "
                f"[{rec.lower_bound}, {rec.upper_bound}]"
            )
        total += rec.normalized()
    return total / len(records)

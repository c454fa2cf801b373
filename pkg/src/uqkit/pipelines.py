"""End-to-end evaluation pipelines driven by a single JSON config.

A run loads one manifest, builds its predictors (trained heads, loaded
heads, or the manifest's stored logits), executes the requested tasks, and
assembles one deterministic Report. Task prerequisites are checked against
the manifest before any compute; within a task, sub-metrics that cannot be
computed for a particular split are skipped with a recorded reason rather
than aborting the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .active import ALConfig, al_loop
from .errors import DegenerateMetricError, ValidationError
from .heads import (
    Head,
    TrainConfig,
    fewshot_sample,
    lbfgs_logreg,
    load_head,
    train_head,
)
from .heads.base import softmax
from .manifest import DatasetManifest, SplitSpec, load_manifest
from .metrics import (
    CurvePoint,
    MetricRecord,
    PredictionBatch,
    accuracy,
    binary_auprc,
    binary_auroc,
    brier,
    calibration_auroc,
    default_rejection_rates,
    ece,
    kl_upper_bound,
    label_uncertainty_kl,
    nll,
    nll_upper_bound,
    oracle_collaborative_accuracy,
    oracle_collaborative_auroc,
    rejection_auc,
    rejection_curve,
    subpopulation_percentiles,
)
from .ood import (
    SequenceDistribution,
    entropy_score,
    fit_class_gaussians,
    mahalanobis_score,
    maxlogit_score,
    msp_score,
    relative_mahalanobis_score,
    sequence_entropy_score,
)
from .report import Report, config_hash

TASKS = (
    "eval",
    "calibration",
    "selective",
    "osr",
    "label_uncertainty",
    "subpop",
    "fewshot",
    "zeroshot_osr",
    "active_learning",
    "score",
)

TASK_AREAS = {
    "eval": "robust_generalization",
    "calibration": "uncertainty",
    "selective": "uncertainty",
    "osr": "uncertainty",
    "label_uncertainty": "uncertainty",
    "subpop": "robust_generalization",
    "fewshot": "adaptation",
    "zeroshot_osr": "adaptation",
    "active_learning": "adaptation",
}

AREAS = ("uncertainty", "robust_generalization", "adaptation")

# roles whose labels describe the manifest's own classes; semantic_shift
# splits hold open-set examples, so generalization metrics skip them
GENERALIZATION_ROLES = ("test", "covariate_shift", "subpopulation", "label_uncertainty")

OC_AUROC_FLAG = "oracle-collaborative-auroc-interpretation"
MEAN_FIELD_FLAG = "gp-mean-field-lambda-pi-8"
SEQ_ENTROPY_FLAG = "sequence-entropy-magnitude"
DATASET_GROUPING_FLAG = "records-averaged-within-dataset-then-across"
STD_SUFFIX = "_std"  # dispersion records; excluded from reliability scoring


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration; see README for the JSON schema."""

    manifest_path: str
    heads: tuple[dict, ...] = ()
    tasks: tuple[str, ...] = ("eval",)
    seed: int = 0
    out: str | None = None
    ece_bins: int = 15
    budgets: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05)
    rejection_rates: tuple[float, ...] | None = None
    shots: tuple[int, ...] = (1, 5, 10, 25)
    fewshot_seeds: tuple[int, ...] = (0, 1, 2)
    fewshot_l2: float = 1e-4
    percentiles: tuple[float, ...] = (5, 25, 50, 75, 95)
    al: dict = field(default_factory=dict)
    raw_doc: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ValidationError(f"unknown tasks {sorted(unknown)}")
        if self.ece_bins < 1:
            raise ValidationError("ece_bins must be >= 1")
        if "fewshot" in self.tasks and not self.shots:
            raise ValidationError("fewshot task needs a non-empty shots list")

    @classmethod
    def from_doc(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(doc, dict) or "manifest" not in doc:
            raise ValidationError("config must be an object with a 'manifest' key")
        unknown = set(doc) - {"manifest", "heads", "tasks", "seed", "out", "options"}
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        manifest_path = doc["manifest"]
        if base_dir is not None and not Path(manifest_path).is_absolute():
            manifest_path = str(base_dir / manifest_path)
        kwargs = dict(
            manifest_path=manifest_path,
            heads=tuple(doc.get("heads", ())),
            tasks=tuple(doc.get("tasks", ("eval",))),
            seed=int(doc.get("seed", 0)),
            out=doc.get("out"),
            raw_doc=doc,
        )
        options = doc.get("options", {})
        option_fields = {
            "ece_bins": int,
            "budgets": tuple,
            "rejection_rates": lambda v: None if v is None else tuple(v),
            "shots": lambda v: tuple(int(s) for s in v),
            "fewshot_seeds": lambda v: tuple(int(s) for s in v),
            "fewshot_l2": float,
            "percentiles": tuple,
            "al": dict,
        }
        bad = set(options) - set(option_fields)
        if bad:
            raise ValidationError(f"unknown option keys {sorted(bad)}")
        for name, conv in option_fields.items():
            if name in options:
                kwargs[name] = conv(options[name])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"unreadable config {path}: {exc}") from exc
        return cls.from_doc(doc, base_dir=path.parent)


class Predictor:
    """A named source of class probabilities for manifest splits: either a
    trained head over embeddings or the manifest's stored logits."""

    def __init__(self, name: str, head: Head | None):
        self.name = name
        self.head = head

    @property
    def flags(self) -> tuple[str, ...]:
        if self.head is not None and self.head.descriptor_flags().get("mean_field_variance"):
            return (MEAN_FIELD_FLAG,)
        return ()

    def probs(self, split: SplitSpec) -> np.ndarray:
        """Flat [N x K] probabilities; raises ValidationError when the split
        lacks the needed columns."""
        if split.is_sequence:
            raise ValidationError(f"split '{split.name}' is a sequence split")
        if self.head is not None:
            if split.embeddings is None:
                raise ValidationError(f"split '{split.name}' has no embeddings")
            return self.head.predict_probs(split.embeddings.astype(np.float64))
        if split.logits is None:
            raise ValidationError(f"split '{split.name}' has no stored logits")
        return softmax(split.logits.astype(np.float64))

    def logits(self, split: SplitSpec) -> np.ndarray:
        if self.head is not None:
            if split.embeddings is None:
                raise ValidationError(f"split '{split.name}' has no embeddings")
            return predict_logits(self.head, split.embeddings.astype(np.float64))
        if split.logits is None:
            raise ValidationError(f"split '{split.name}' has no stored logits")
        return split.logits.astype(np.float64)

    def batch(self, split: SplitSpec) -> PredictionBatch:
        if split.is_sequence:
            probs, labels = flatten_sequence_probs(split)
            return PredictionBatch(probs, labels)
        return PredictionBatch(
            self.probs(split), split.labels,
            soft_labels=split.soft_labels, groups=split.groups,
        )


def predict_logits(head: Head, x: np.ndarray) -> np.ndarray:
    """Pre-softmax scores for MaxLogit; ensembles average member logits."""
    if hasattr(head, "logits"):
        return head.logits(x)
    if head.kind == "rfgp":
        return head.features(x) @ head.beta
    if head.kind == "heteroscedastic":
        return (x @ head.w_mu + head.b_mu) / head.temperature
    if head.kind == "batch_ensemble":
        return head.member_logits(x).mean(axis=0)
    if head.kind == "mc_dropout":
        ones = [np.ones((x.shape[0], h)) for h in head.hidden]
        return head._forward(x, ones)[0]
    if head.kind == "ensemble":
        return np.mean([predict_logits(m, x) for m in head.members], axis=0)
    raise ValidationError(f"head kind {head.kind!r} exposes no logits")


def flatten_sequence_probs(split: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-token probabilities and labels with padding steps dropped."""
    if split.logits is None:
        raise ValidationError(f"sequence split '{split.name}' has no logits")
    k = split.logits.shape[2]
    probs = softmax(split.logits.astype(np.float64))
    valid = split.labels < k  # padding id == K
    return probs[valid], split.labels[valid].astype(np.int64)


def sequence_scores(split: SplitSpec) -> np.ndarray:
    """Mean per-step conditional entropy per example, padding excluded."""
    probs = softmax(split.logits.astype(np.float64))
    k = probs.shape[2]
    scores = np.empty(split.num_examples)
    for i in range(split.num_examples):
        valid = int((split.labels[i] < k).sum())
        scores[i] = sequence_entropy_score(
            SequenceDistribution(probs[i], length=max(valid, 1))
        )
    return scores


def _rec(task, dataset, split, metric, value, *, head="", flags=(),
         lo=0.0, hi=1.0, higher=True) -> MetricRecord:
    """Build a record; values outside the scoring bounds are clipped with the
    raw value preserved in a flag, so downstream aggregation stays total."""
    value = float(value)
    if value < lo or value > hi:
        flags = tuple(flags) + (f"value-clamped-from={value:.9g}",)
        value = min(max(value, lo), hi)
    return MetricRecord(
        task=task, dataset=dataset, split=split, metric=metric, value=value,
        higher_is_better=higher, lower_bound=lo, upper_bound=hi,
        head=head, flags=tuple(flags),
    )


def build_predictors(config: RunConfig, manifest: DatasetManifest) -> list[Predictor]:
    """Train or load the configured heads; with no head specs the manifest's
    stored logits act as the single predictor."""
    if not config.heads:
        return [Predictor("logits", None)]
    train_split = manifest.splits_with_role("train")
    predictors = []
    for i, spec in enumerate(config.heads):
        unknown = set(spec) - {"name", "kind", "path", "hyper", "train"}
        if unknown:
            raise ValidationError(f"head spec {i}: unknown keys {sorted(unknown)}")
        name = spec.get("name", spec.get("kind", f"head{i}") + (str(i) if "kind" in spec else ""))
        if "path" in spec:
            predictors.append(Predictor(name, load_head(spec["path"])))
            continue
        kind = spec.get("kind")
        if kind is None:
            raise ValidationError(f"head spec {i}: needs 'kind' or 'path'")
        if not train_split:
            raise ValidationError(f"head spec {i}: manifest has no train split")
        train = train_split[0]
        if train.embeddings is None:
            raise ValidationError("train split has no embeddings to train a head on")
        x = train.embeddings.astype(np.float64)
        y = train.labels.astype(np.int64)
        hyper = dict(spec.get("hyper", {}))
        if kind == "logreg":
            head = lbfgs_logreg(
                x, y, num_classes=manifest.num_classes,
                **{k: v for k, v in hyper.items() if k in ("l2", "max_iters", "tol")},
            )
        else:
            train_cfg = TrainConfig(
                **{**spec.get("train", {}), "seed": config.seed + 1009 * i}
            )
            head = train_head(kind, x, y, train_cfg,
                              num_classes=manifest.num_classes, **hyper)
        predictors.append(Predictor(name, head))
    names = [p.name for p in predictors]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate head names: {names}")
    return predictors


def check_prerequisites(config: RunConfig, manifest: DatasetManifest) -> None:
    """Validate every requested task's data prerequisites before any compute."""
    def need(cond, message):
        if not cond:
            raise ValidationError(f"task prerequisites: {message}")

    tests = manifest.splits_with_role("test")
    trains = manifest.splits_with_role("train")
    shifts = manifest.splits_with_role("semantic_shift")
    have_train_emb = bool(trains) and trains[0].embeddings is not None

    def probs_available(split):
        if config.heads:
            return split.embeddings is not None or split.logits is not None
        return split.logits is not None

    for task in config.tasks:
        if task in ("eval", "calibration", "selective"):
            need(tests, f"{task} needs a test split")
            need(any(probs_available(s) for s in tests),
                 f"{task}: test split provides neither usable logits nor embeddings")
        elif task == "osr":
            need(tests and shifts, "osr needs a test split and a semantic_shift split")
        elif task == "label_uncertainty":
            need(any(s.soft_labels is not None for s in manifest.splits.values()),
                 "label_uncertainty needs a split with soft_labels")
        elif task == "subpop":
            need(any(s.groups is not None for s in manifest.splits.values()),
                 "subpop needs a split with group ids")
        elif task == "fewshot":
            need(have_train_emb, "fewshot needs train embeddings")
            need(tests and tests[0].embeddings is not None,
                 "fewshot needs test embeddings")
            counts = np.bincount(trains[0].labels.astype(np.int64),
                                 minlength=manifest.num_classes)
            need(counts.min() >= max(config.shots),
                 f"fewshot: smallest class has {counts.min()} examples, "
                 f"largest shot count is {max(config.shots)}")
        elif task == "zeroshot_osr":
            need(have_train_emb, "zeroshot_osr needs train embeddings")
            need(tests and tests[0].embeddings is not None,
                 "zeroshot_osr needs test embeddings")
            need(any(s.embeddings is not None for s in shifts),
                 "zeroshot_osr needs a semantic_shift split with embeddings")
        elif task == "active_learning":
            need(have_train_emb and tests and tests[0].embeddings is not None,
                 "active_learning needs train and test embeddings")
        elif task == "score":
            need(len(set(config.tasks)) > 1, "score needs other tasks to aggregate")


def _eval_splits(manifest: DatasetManifest) -> list[SplitSpec]:
    return [s for s in manifest.splits.values() if s.role in GENERALIZATION_ROLES]


def run_eval(config: RunConfig, manifest: DatasetManifest,
             predictors: list[Predictor]) -> Report:
    """Generalization metrics per (predictor, split) across in-distribution
    and shifted splits. Semantic-shift splits are open-set-only and skipped."""
    report = Report()
    k = manifest.num_classes
    for split in _eval_splits(manifest):
        for pred in predictors:
            try:
                batch = pred.batch(split)
            except ValidationError as exc:
                report.note_skip(f"eval/{split.name}/{pred.name}", str(exc))
                continue

            def add(metric, value, lo=0.0, hi=1.0, higher=True):
                report.add(_rec("eval", manifest.name, split.name, metric, value,
                                head=pred.name, flags=pred.flags,
                                lo=lo, hi=hi, higher=higher))

            add("accuracy", accuracy(batch))
            add("nll", nll(batch), hi=nll_upper_bound(k), higher=False)
            add("brier", brier(batch), hi=2.0, higher=False)
            add("ece", ece(batch, config.ece_bins), higher=False)
            if k == 2 and not split.is_sequence:
                try:
                    scores = batch.probs[:, 1]
                    positives = batch.labels == 1
                    add("auroc", binary_auroc(scores, positives))
                    add("auprc", binary_auprc(scores, positives))
                except DegenerateMetricError as exc:
                    report.note_skip(f"eval/{split.name}/{pred.name}/auroc", str(exc))
    for split in manifest.splits_with_role("semantic_shift"):
        report.note_skip(f"eval/{split.name}",
                         "semantic_shift splits are evaluated by the osr task only")
    return report


def run_calibration(config: RunConfig, manifest: DatasetManifest,
                    predictors: list[Predictor]) -> Report:
    report = Report()
    for split in _eval_splits(manifest):
        for pred in predictors:
            try:
                batch = pred.batch(split)
            except ValidationError as exc:
                report.note_skip(f"calibration/{split.name}/{pred.name}", str(exc))
                continue
            report.add(_rec("calibration", manifest.name, split.name, "ece",
                            ece(batch, config.ece_bins), head=pred.name,
                            flags=pred.flags, higher=False))
            try:
                report.add(_rec("calibration", manifest.name, split.name,
                                "calibration_auroc", calibration_auroc(batch),
                                head=pred.name, flags=pred.flags))
            except DegenerateMetricError as exc:
                report.note_skip(
                    f"calibration/{split.name}/{pred.name}/calibration_auroc", str(exc)
                )
    return report


def run_selective(config: RunConfig, manifest: DatasetManifest,
                  predictors: list[Predictor]) -> Report:
    """Oracle-collaborative metrics over the budget grid plus rejection
    curves; uncertainty is 1 - max probability throughout."""
    report = Report()
    rates = list(config.rejection_rates) if config.rejection_rates is not None \
        else default_rejection_rates()
    for split in _eval_splits(manifest):
        for pred in predictors:
            try:
                batch = pred.batch(split)
            except ValidationError as exc:
                report.note_skip(f"selective/{split.name}/{pred.name}", str(exc))
                continue
            uncertainty = 1.0 - batch.confidences()
            for budget in config.budgets:
                report.add(_rec("selective", manifest.name, split.name,
                                f"oc_accuracy@{budget:g}",
                                oracle_collaborative_accuracy(batch, uncertainty, budget),
                                head=pred.name, flags=pred.flags))
                try:
                    report.add(_rec("selective", manifest.name, split.name,
                                    f"oc_auroc@{budget:g}",
                                    oracle_collaborative_auroc(batch, uncertainty, budget),
                                    head=pred.name,
                                    flags=pred.flags + (OC_AUROC_FLAG,)))
                except DegenerateMetricError as exc:
                    report.note_skip(
                        f"selective/{split.name}/{pred.name}/oc_auroc@{budget:g}",
                        str(exc),
                    )
            metrics = ["accuracy"] + (["auroc", "auprc"] if manifest.num_classes == 2
                                      and not split.is_sequence else [])
            for metric in metrics:
                points, omitted = rejection_curve(batch, uncertainty, metric, rates)
                for note in omitted:
                    report.note_skip(
                        f"selective/{split.name}/{pred.name}/rejection_{metric}", note
                    )
                if len(points) >= 2:
                    span = points[-1].x - points[0].x
                    report.add_curve(
                        f"rejection_{metric}/{manifest.name}/{split.name}/{pred.name}",
                        points,
                    )
                    report.add(_rec("selective", manifest.name, split.name,
                                    f"rejection_auc_{metric}", rejection_auc(points),
                                    head=pred.name, flags=pred.flags, hi=span))
    return report


def _fit_train_gaussians(manifest: DatasetManifest):
    trains = manifest.splits_with_role("train")
    if not trains or trains[0].embeddings is None:
        raise ValidationError("no train embeddings for distance scores")
    train = trains[0]
    labels = train.labels.astype(np.int64)
    observed = np.unique(labels)
    flags = ()
    if observed.size == 1:
        # single observed class: the background fit coincides with the class
        # fit and the relative distance degenerates to zero everywhere
        flags = ("rmd-degenerate-single-class",)
        model = fit_class_gaussians(
            train.embeddings.astype(np.float64),
            np.zeros_like(labels), num_classes=1,
        )
    else:
        model = fit_class_gaussians(
            train.embeddings.astype(np.float64), labels,
            num_classes=manifest.num_classes,
        )
    return model, flags


def run_osr(config: RunConfig, manifest: DatasetManifest,
            predictors: list[Predictor]) -> Report:
    """AUROC/AUPRC of each uncertainty score separating the in-distribution
    test split from each semantic_shift split (OOD is the positive class)."""
    report = Report()
    tests = manifest.splits_with_role("test")
    test = tests[0]
    shifts = manifest.splits_with_role("semantic_shift")

    gaussians = None
    gauss_flags: tuple = ()
    if test.embeddings is not None and any(s.embeddings is not None for s in shifts):
        try:
            gaussians, gauss_flags = _fit_train_gaussians(manifest)
        except ValidationError as exc:
            report.note_skip("osr/mahalanobis", str(exc))

    for shift in shifts:
        if test.is_sequence or shift.is_sequence:
            _run_sequence_osr(report, manifest, test, shift)
            continue
        for pred in predictors:
            try:
                p_in, p_out = pred.probs(test), pred.probs(shift)
            except ValidationError as exc:
                report.note_skip(f"osr/{shift.name}/{pred.name}", str(exc))
                p_in = None
            if p_in is not None:
                _osr_records(report, "osr", manifest, shift.name, pred.name, "msp",
                             msp_score(p_in), msp_score(p_out), pred.flags)
                _osr_records(report, "osr", manifest, shift.name, pred.name, "entropy",
                             entropy_score(p_in), entropy_score(p_out), pred.flags)
                try:
                    z_in, z_out = pred.logits(test), pred.logits(shift)
                    _osr_records(report, "osr", manifest, shift.name, pred.name,
                                 "maxlogit", maxlogit_score(z_in),
                                 maxlogit_score(z_out), pred.flags)
                except ValidationError as exc:
                    report.note_skip(f"osr/{shift.name}/{pred.name}/maxlogit", str(exc))
        if gaussians is not None:
            if shift.embeddings is None:
                report.note_skip(f"osr/{shift.name}/mahalanobis",
                                 "split has no embeddings")
                continue
            e_in = test.embeddings.astype(np.float64)
            e_out = shift.embeddings.astype(np.float64)
            _osr_records(report, "osr", manifest, shift.name, "embeddings", "maha",
                         mahalanobis_score(gaussians, e_in),
                         mahalanobis_score(gaussians, e_out), gauss_flags)
            _osr_records(report, "osr", manifest, shift.name, "embeddings", "rmaha",
                         relative_mahalanobis_score(gaussians, e_in),
                         relative_mahalanobis_score(gaussians, e_out), gauss_flags)
    return report


def _osr_records(report, task, manifest, split_name, head, score_name,
                 in_scores, out_scores, flags=()):
    scores = np.concatenate([np.atleast_1d(in_scores), np.atleast_1d(out_scores)])
    positives = np.concatenate([
        np.zeros(np.atleast_1d(in_scores).size, dtype=bool),
        np.ones(np.atleast_1d(out_scores).size, dtype=bool),
    ])
    try:
        auroc = binary_auroc(scores, positives)
        auprc = binary_auprc(scores, positives)
    except DegenerateMetricError as exc:
        report.note_skip(f"{task}/{split_name}/{head}/{score_name}", str(exc))
        return
    report.add(_rec(task, manifest.name, split_name, f"osr_auroc[{score_name}]",
                    auroc, head=head, flags=flags))
    report.add(_rec(task, manifest.name, split_name, f"osr_auprc[{score_name}]",
                    auprc, head=head, flags=flags))


def _run_sequence_osr(report, manifest, test, shift):
    """Sequence OSR: conditional-entropy scores with the any-OOD-token rule.

    Tokens never seen among the train split labels are the OOD vocabulary;
    an example counts as OOD when any of its non-padding tokens is OOD.
    Examples from both splits are pooled, so a shift-split example whose
    tokens are all known counts as in-distribution.
    """
    trains = manifest.splits_with_role("train")
    if not trains:
        report.note_skip(f"osr/{shift.name}/sequence", "no train split for token set")
        return
    k = manifest.num_classes
    known = set(np.unique(trains[0].labels).tolist()) - {k}
    scores, positives = [], []
    for split in (test, shift):
        if not split.is_sequence or split.logits is None:
            report.note_skip(f"osr/{shift.name}/sequence",
                             f"split '{split.name}' lacks sequence logits")
            return
        scores.append(sequence_scores(split))
        for row in split.labels:
            tokens = set(row[row < k].tolist())
            positives.append(bool(tokens - known))
    scores = np.concatenate(scores)
    positives = np.array(positives)
    try:
        auroc = binary_auroc(scores, positives)
        auprc = binary_auprc(scores, positives)
    except DegenerateMetricError as exc:
        report.note_skip(f"osr/{shift.name}/sequence", str(exc))
        return
    flags = (SEQ_ENTROPY_FLAG,)
    report.add(_rec("osr", manifest.name, shift.name, "osr_auroc[seq_entropy]",
                    auroc, head="logits", flags=flags))
    report.add(_rec("osr", manifest.name, shift.name, "osr_auprc[seq_entropy]",
                    auprc, head="logits", flags=flags))


def run_label_uncertainty(config: RunConfig, manifest: DatasetManifest,
                          predictors: list[Predictor]) -> Report:
    report = Report()
    for split in manifest.splits.values():
        if split.soft_labels is None:
            continue
        for pred in predictors:
            try:
                batch = pred.batch(split)
            except ValidationError as exc:
                report.note_skip(f"label_uncertainty/{split.name}/{pred.name}", str(exc))
                continue
            report.add(_rec("label_uncertainty", manifest.name, split.name,
                            "label_kl", label_uncertainty_kl(batch),
                            head=pred.name, flags=pred.flags,
                            hi=kl_upper_bound(), higher=False))
    return report


def run_subpop(config: RunConfig, manifest: DatasetManifest,
               predictors: list[Predictor]) -> Report:
    report = Report()
    for split in manifest.splits.values():
        if split.groups is None:
            continue
        for pred in predictors:
            try:
                batch = pred.batch(split)
            except ValidationError as exc:
                report.note_skip(f"subpop/{split.name}/{pred.name}", str(exc))
                continue
            correct = batch.correct()
            per_group = {
                int(g): float(correct[split.groups == g].mean())
                for g in np.unique(split.groups)
            }
            pcts = subpopulation_percentiles(per_group, config.percentiles)
            for q, value in pcts.items():
                report.add(_rec("subpop", manifest.name, split.name,
                                f"subpop_accuracy_p{q:g}", value,
                                head=pred.name, flags=pred.flags))
    return report


def run_fewshot(config: RunConfig, manifest: DatasetManifest) -> Report:
    """Linear evaluation: sample x shots per class, fit logistic regression
    with L-BFGS, evaluate; mean and *_std records aggregate over the seeds."""
    report = Report()
    train = manifest.splits_with_role("train")[0]
    test = manifest.splits_with_role("test")[0]
    shifts = [s for s in manifest.splits_with_role("semantic_shift")
              if s.embeddings is not None]
    x_train = train.embeddings.astype(np.float64)
    y_train = train.labels.astype(np.int64)
    x_test = test.embeddings.astype(np.float64)

    for shots in config.shots:
        per_seed: dict[str, list[float]] = {}
        for seed in config.fewshot_seeds:
            idx = fewshot_sample(y_train, shots, seed,
                                 num_classes=manifest.num_classes)
            head = lbfgs_logreg(x_train[idx], y_train[idx], l2=config.fewshot_l2,
                                num_classes=manifest.num_classes)
            batch = PredictionBatch(head.predict_probs(x_test), test.labels)
            per_seed.setdefault("accuracy", []).append(accuracy(batch))
            per_seed.setdefault("nll", []).append(nll(batch))
            per_seed.setdefault("ece", []).append(ece(batch, config.ece_bins))
            try:
                cal_auroc = calibration_auroc(batch)
            except DegenerateMetricError as exc:
                report.note_skip(
                    f"fewshot/{shots}-shot/seed{seed}/calibration_auroc", str(exc)
                )
            else:
                per_seed.setdefault("calibration_auroc", []).append(cal_auroc)
            if shifts:
                in_scores = msp_score(batch.probs)
                out_scores = msp_score(
                    head.predict_probs(shifts[0].embeddings.astype(np.float64))
                )
                scores = np.concatenate([in_scores, out_scores])
                positives = np.arange(scores.size) >= in_scores.size
                per_seed.setdefault("osr_auroc[msp]", []).append(
                    binary_auroc(scores, positives)
                )

        bounds = {
            "accuracy": (0.0, 1.0, True),
            "nll": (0.0, nll_upper_bound(manifest.num_classes), False),
            "ece": (0.0, 1.0, False),
            "calibration_auroc": (0.0, 1.0, True),
            "osr_auroc[msp]": (0.0, 1.0, True),
        }
        split_name = f"{shots}-shot"
        for metric, values in per_seed.items():
            if not values:
                continue
            lo, hi, higher = bounds[metric]
            report.add(_rec("fewshot", manifest.name, split_name, metric,
                            float(np.mean(values)), lo=lo, hi=hi, higher=higher))
            report.add(_rec("fewshot", manifest.name, split_name,
                            metric + STD_SUFFIX, float(np.std(values)),
                            lo=0.0, hi=max(hi - lo, 1.0), higher=False))
    return report


def run_zeroshot_osr(config: RunConfig, manifest: DatasetManifest) -> Report:
    """Mahalanobis / relative-Mahalanobis OSR straight from raw embeddings."""
    report = Report()
    test = manifest.splits_with_role("test")[0]
    try:
        model, flags = _fit_train_gaussians(manifest)
    except ValidationError as exc:
        report.note_skip("zeroshot_osr", str(exc))
        return report
    e_in = test.embeddings.astype(np.float64)
    for shift in manifest.splits_with_role("semantic_shift"):
        if shift.embeddings is None:
            report.note_skip(f"zeroshot_osr/{shift.name}", "split has no embeddings")
            continue
        e_out = shift.embeddings.astype(np.float64)
        for score_name, fn in (("maha", mahalanobis_score),
                               ("rmaha", relative_mahalanobis_score)):
            _osr_records(report, "zeroshot_osr", manifest, shift.name, "embeddings",
                         score_name, fn(model, e_in), fn(model, e_out), flags)
    return report


def run_active_learning(config: RunConfig, manifest: DatasetManifest) -> Report:
    report = Report()
    al_options = dict(config.al)
    train_overrides = al_options.pop("train", {})
    head_kind = al_options.pop("head_kind", "linear")
    head_hyper = al_options.pop("head_hyper", {})
    cfg = ALConfig(
        seed=config.seed,
        head_kind=head_kind,
        head_hyper=head_hyper,
        train=TrainConfig(**{"seed": config.seed, **train_overrides}),
        **al_options,
    )
    curve, pool = al_loop(manifest, cfg)
    max_labels = curve[-1][0]
    report.add_curve(
        f"active_learning/{manifest.name}/{cfg.strategy}",
        [CurvePoint(labels / max_labels, acc) for labels, acc in curve],
    )
    report.provenance["active_learning_curve"] = [
        {"num_labels": int(labels), "accuracy": float(acc)} for labels, acc in curve
    ]
    report.add(_rec("active_learning", manifest.name, "test",
                    f"al_final_accuracy[{cfg.strategy}]", curve[-1][1]))
    return report


def scoring_records(records: list[MetricRecord]) -> list[MetricRecord]:
    return [r for r in records if not r.metric.endswith(STD_SUFFIX)]


def compute_reliability(records: list[MetricRecord]) -> dict:
    """Overall and per-area reliability scores on the 0-100 scale.

    Records are normalized per their bounds, averaged within each dataset,
    then across datasets (flagged choice). Dispersion (*_std) records are
    excluded. Areas with no records are reported as missing.
    """
    usable = scoring_records(records)
    if not usable:
        raise ValidationError("reliability score needs at least one record")
    for rec in usable:
        if rec.bounds_violation() > 1e-9:
            raise ValidationError(
                f"record {rec.metric}: value {rec.value} outside bounds"
            )

    def grouped_score(recs):
        by_dataset: dict[str, list[float]] = {}
        for r in recs:
            by_dataset.setdefault(r.dataset, []).append(r.normalized())
        return float(np.mean([np.mean(v) for v in by_dataset.values()]))

    areas = {}
    missing = []
    for area in AREAS:
        area_recs = [r for r in usable if TASK_AREAS.get(r.task) == area]
        if area_recs:
            areas[area] = grouped_score(area_recs)
        else:
            missing.append(area)
    return {
        "overall": grouped_score(usable),
        "areas": areas,
        "missing_areas": missing,
        "flags": [DATASET_GROUPING_FLAG],
    }


TASK_RUNNERS = {
    "eval": run_eval,
    "calibration": run_calibration,
    "selective": run_selective,
    "osr": run_osr,
    "label_uncertainty": run_label_uncertainty,
    "subpop": run_subpop,
}


def run_pipeline(config: RunConfig) -> Report:
    """Execute the configured tasks against the manifest and assemble the
    final report with provenance."""
    manifest = load_manifest(config.manifest_path)
    check_prerequisites(config, manifest)

    needs_predictors = any(t in TASK_RUNNERS for t in config.tasks)
    predictors = build_predictors(config, manifest) if needs_predictors else []

    report = Report()
    for task in TASKS:
        if task not in config.tasks:
            continue
        if task in TASK_RUNNERS:
            report.merge(TASK_RUNNERS[task](config, manifest, predictors))
        elif task == "fewshot":
            report.merge(run_fewshot(config, manifest))
        elif task == "zeroshot_osr":
            report.merge(run_zeroshot_osr(config, manifest))
        elif task == "active_learning":
            report.merge(run_active_learning(config, manifest))

    if "score" in config.tasks:
        report.provenance["reliability"] = compute_reliability(report.records)

    report.provenance.update(
        {
            "config_hash": config_hash(config.raw_doc),
            "seed": config.seed,
            "version": __version__,
            "tasks": list(config.tasks),
            "dataset": manifest.name,
            "heads": [p.name for p in predictors],
        }
    )
    return report

"""End-to-end pipelines: task orchestration, reports, and the CLI."""

from __future__ import annotations

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from uqkit.errors import ValidationError
from uqkit.heads import TrainConfig, lbfgs_logreg, train_head
from uqkit.metrics import MetricRecord, PredictionBatch, accuracy
from uqkit.pipelines import (
    RunConfig,
    build_predictors,
    check_prerequisites,
    compute_reliability,
    run_pipeline,
)
from uqkit.manifest import load_manifest

from conftest import make_blobs, random_probs, write_manifest


def one_hot_logits(labels, k, scale=20.0):
    logits = np.full((len(labels), k), -scale / 2)
    logits[np.arange(len(labels)), labels] = scale / 2
    return logits


def golden_manifest(tmp_path, rng, with_heads_data=True):
    """Small multi-split dataset exercising every task family."""
    k, d = 3, 4
    means = 3.0 * np.eye(k)[:, :d] if d >= k else None
    means = np.zeros((k, d))
    means[:, :k] = 3.0 * np.eye(k)[:, :k]

    def draw(n, spread=0.8):
        y = rng.integers(0, k, n)
        x = means[y] + spread * rng.standard_normal((n, d))
        return x, y

    x_train, y_train = draw(120)
    x_test, y_test = draw(60)
    x_shift, y_shift = draw(40, spread=1.2)
    x_ood = 6.0 + rng.standard_normal((30, d))
    soft = random_probs(rng, 25, k)
    y_soft = soft.argmax(axis=1)
    x_soft, _ = draw(25)
    groups = rng.integers(0, 4, 40)

    splits = {
        "train": {"role": "train", "embeddings": x_train, "labels": y_train},
        "test": {"role": "test", "embeddings": x_test, "labels": y_test},
        "shift": {"role": "covariate_shift", "embeddings": x_shift, "labels": y_shift},
        "ood": {"role": "semantic_shift", "embeddings": x_ood,
                "labels": np.zeros(30, dtype=int)},
        "human": {"role": "label_uncertainty", "embeddings": x_soft,
                  "labels": y_soft, "soft_labels": soft},
        "groups": {"role": "subpopulation", "embeddings": x_shift,
                   "labels": y_shift, "groups": groups},
    }
    return write_manifest(tmp_path, "golden", [f"c{i}" for i in range(k)], splits)


def golden_config(manifest_path, out=None, tasks=None, seed=7):
    return {
        "manifest": str(manifest_path),
        "heads": [{"name": "lin", "kind": "linear",
                   "train": {"epochs": 15, "lr": 0.1, "batch_size": 32}}],
        "tasks": tasks or ["eval", "calibration", "selective", "osr",
                           "label_uncertainty", "subpop", "fewshot",
                           "zeroshot_osr", "score"],
        "options": {"shots": [1, 5], "fewshot_seeds": [0, 1], "budgets": [0.05, 0.2],
                    "rejection_rates": [0.0, 0.25, 0.5, 0.75]},
        "seed": seed,
        "out": str(out) if out else None,
    }


class TestRunEval:
    def test_perfect_predictor_fixture(self, tmp_path, rng):
        k = 3
        labels = rng.integers(0, k, 30)
        logits = one_hot_logits(labels, k)
        splits = {
            "test": {"role": "test", "logits": logits, "labels": labels},
        }
        path = write_manifest(tmp_path, "perfect", ["a", "b", "c"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["eval"]})
        report = run_pipeline(config)
        by_metric = {r.metric: r for r in report.records}
        assert by_metric["accuracy"].value == 1.0
        assert by_metric["nll"].value == pytest.approx(0.0, abs=1e-8)
        assert by_metric["ece"].value == pytest.approx(0.0, abs=1e-8)

    def test_binary_manifest_gets_auroc_multiclass_does_not(self, tmp_path, rng):
        for k, name in ((2, "binary"), (3, "multi")):
            labels = rng.integers(0, k, 40)
            logits = rng.standard_normal((40, k))
            path = write_manifest(
                tmp_path, name, [f"c{i}" for i in range(k)],
                {"test": {"role": "test", "logits": logits, "labels": labels}},
            )
            config = RunConfig.from_doc({"manifest": str(path), "tasks": ["eval"]})
            metrics = {r.metric for r in run_pipeline(config).records}
            assert ("auroc" in metrics) == (k == 2)
            assert ("auprc" in metrics) == (k == 2)

    def test_semantic_shift_skipped_with_reason(self, tmp_path, rng):
        labels = rng.integers(0, 2, 20)
        splits = {
            "test": {"role": "test", "logits": rng.standard_normal((20, 2)),
                     "labels": labels},
            "ood": {"role": "semantic_shift", "logits": rng.standard_normal((10, 2)),
                    "labels": np.zeros(10, dtype=int)},
        }
        path = write_manifest(tmp_path, "skip", ["a", "b"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["eval"]})
        report = run_pipeline(config)
        assert not any(r.split == "ood" for r in report.records)
        assert any("osr task" in note for note in report.provenance["skipped"])

    def test_missing_columns_do_not_abort_other_splits(self, tmp_path, rng):
        labels = rng.integers(0, 2, 20)
        splits = {
            "train": {"role": "train", "embeddings": rng.standard_normal((30, 3)),
                      "labels": rng.integers(0, 2, 30)},
            "test": {"role": "test", "embeddings": rng.standard_normal((20, 3)),
                     "labels": labels},
            "shift": {"role": "covariate_shift",
                      "logits": rng.standard_normal((10, 2)),
                      "labels": rng.integers(0, 2, 10)},
        }
        path = write_manifest(tmp_path, "partial", ["a", "b"], splits)
        config = RunConfig.from_doc({
            "manifest": str(path), "tasks": ["eval"],
            "heads": [{"name": "lin", "kind": "linear", "train": {"epochs": 2}}],
        })
        report = run_pipeline(config)
        # the head cannot score the logits-only shift split, but test records exist
        assert any(r.split == "test" for r in report.records)
        assert not any(r.split == "shift" for r in report.records)
        assert any("shift" in note for note in report.provenance["skipped"])


class TestPrerequisites:
    def test_osr_without_shift_split_fails_before_compute(self, tmp_path, rng):
        labels = rng.integers(0, 2, 20)
        path = write_manifest(
            tmp_path, "noshift", ["a", "b"],
            {"test": {"role": "test", "logits": rng.standard_normal((20, 2)),
                      "labels": labels}},
        )
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["osr"]})
        with pytest.raises(ValidationError, match="semantic_shift"):
            run_pipeline(config)

    def test_fewshot_shot_deficit_detected(self, tmp_path, rng):
        splits = {
            "train": {"role": "train", "embeddings": rng.standard_normal((6, 3)),
                      "labels": np.array([0, 0, 0, 0, 1, 1])},
            "test": {"role": "test", "embeddings": rng.standard_normal((6, 3)),
                     "labels": np.array([0, 1, 0, 1, 0, 1])},
        }
        path = write_manifest(tmp_path, "tiny", ["a", "b"], splits)
        config = RunConfig.from_doc({
            "manifest": str(path), "tasks": ["fewshot"],
            "options": {"shots": [5], "fewshot_seeds": [0]},
        })
        with pytest.raises(ValidationError, match="smallest class"):
            run_pipeline(config)

    def test_unknown_task_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="unknown tasks"):
            RunConfig.from_doc({"manifest": "x.json", "tasks": ["nope"]})


class TestOsr:
    def test_disjoint_fixture_percect_separation(self, tmp_path, rng):
        labels = rng.integers(0, 2, 30)
        # confident and correct on test, maximally uncertain on ood
        test_logits = one_hot_logits(labels, 2, scale=10.0)
        ood_logits = np.zeros((20, 2))
        splits = {
            "test": {"role": "test", "logits": test_logits, "labels": labels},
            "far": {"role": "semantic_shift", "logits": ood_logits,
                    "labels": np.zeros(20, dtype=int)},
        }
        path = write_manifest(tmp_path, "osr1", ["a", "b"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["osr"]})
        report = run_pipeline(config)
        values = {r.metric: r.value for r in report.records}
        assert values["osr_auroc[msp]"] == 1.0
        assert values["osr_auroc[entropy]"] == 1.0

    def test_identical_distributions_are_chance(self, tmp_path, rng):
        logits = np.tile([1.0, -1.0], (20, 1))
        splits = {
            "test": {"role": "test", "logits": logits,
                     "labels": rng.integers(0, 2, 20)},
            "same": {"role": "semantic_shift", "logits": logits.copy(),
                     "labels": np.zeros(20, dtype=int)},
        }
        path = write_manifest(tmp_path, "osr2", ["a", "b"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["osr"]})
        report = run_pipeline(config)
        values = {r.metric: r.value for r in report.records}
        assert values["osr_auroc[msp]"] == 0.5
        assert values["osr_auroc[maxlogit]"] == 0.5

    def test_composed_scores_match_module_oracles(self, tmp_path, rng):
        from uqkit.metrics import binary_auroc
        from uqkit.ood import entropy_score, msp_score

        n_in, n_out, k = 12, 8, 3
        test_logits = rng.standard_normal((n_in, k))
        ood_logits = rng.standard_normal((n_out, k))
        splits = {
            "test": {"role": "test", "logits": test_logits,
                     "labels": rng.integers(0, k, n_in)},
            "near": {"role": "semantic_shift", "logits": ood_logits,
                     "labels": np.zeros(n_out, dtype=int)},
        }
        path = write_manifest(tmp_path, "osr3", ["a", "b", "c"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["osr"]})
        values = {r.metric: r.value for r in run_pipeline(config).records}

        def softmax64(z):
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)

        p_in = softmax64(np.asarray(test_logits, dtype=np.float64))
        p_out = softmax64(np.asarray(ood_logits, dtype=np.float64))
        positives = np.arange(n_in + n_out) >= n_in
        for name, fn in (("msp", msp_score), ("entropy", entropy_score)):
            scores = np.concatenate([fn(p_in), fn(p_out)])
            # float32 storage rounds the logits; recompute on the stored values
            assert values[f"osr_auroc[{name}]"] == pytest.approx(
                binary_auroc(scores, positives), abs=1e-9
            )

    def test_sequence_any_token_rule(self, tmp_path, rng):
        k, length = 3, 2
        # train tokens cover {0, 1} only; token 2 is the OOD vocabulary
        splits = {
            "train": {"role": "train", "embeddings": rng.standard_normal((20, 2)),
                      "labels": rng.integers(0, 2, 20)},
            "test": {"role": "test",
                     "logits": rng.standard_normal((10, length, k)),
                     "labels": rng.integers(0, 2, (10, length))},
            "oos": {"role": "semantic_shift",
                    "logits": np.tile(np.zeros((length, k)), (6, 1, 1)),
                    "labels": np.array([[2, 0], [0, 2], [2, 2],
                                        [0, 1], [1, 0], [1, 3]])},
        }
        # last row uses padding id 3 = K; only rows with token 2 are OOD
        path = write_manifest(tmp_path, "seq", ["a", "b", "c"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["osr"]})
        report = run_pipeline(config)
        rec = next(r for r in report.records if r.metric == "osr_auroc[seq_entropy]")
        assert "sequence-entropy-magnitude" in rec.flags

        # independent oracle: per-example mean step entropy over non-pad
        # steps; positives are exactly the rows containing token 2
        from uqkit.metrics import binary_auroc
        from uqkit.ood import entropy_score

        m = load_manifest(path)

        def softmax64(z):
            z = np.asarray(z, dtype=np.float64)
            z = z - z.max(axis=-1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=-1, keepdims=True)

        scores, positives = [], []
        for split_name in ("test", "oos"):
            split = m.splits[split_name]
            probs = softmax64(split.logits)
            for i in range(split.num_examples):
                valid = split.labels[i] < k
                steps = probs[i][valid] if valid.any() else probs[i][:1]
                scores.append(np.mean([entropy_score(row) for row in steps]))
                positives.append(2 in set(split.labels[i][valid].tolist()))
        assert rec.value == pytest.approx(
            binary_auroc(scores, positives), abs=1e-12
        )
        # the 3 token-2 rows are the only positives
        assert sum(positives) == 3


class TestFewshot:
    def test_full_shot_collapses_to_run_eval(self, tmp_path, rng):
        k = 3
        x_train, y_train = make_blobs(rng, 3.0 * np.eye(k), n_per_class=20, scale=0.7)
        x_test, y_test = make_blobs(rng, 3.0 * np.eye(k), n_per_class=15, scale=0.7)
        splits = {
            "train": {"role": "train", "embeddings": x_train, "labels": y_train},
            "test": {"role": "test", "embeddings": x_test, "labels": y_test},
        }
        path = write_manifest(tmp_path, "fs", [f"c{i}" for i in range(k)], splits)
        config = RunConfig.from_doc({
            "manifest": str(path),
            "heads": [{"name": "logreg", "kind": "logreg", "hyper": {"l2": 1e-4}}],
            "tasks": ["eval", "fewshot"],
            "options": {"shots": [20], "fewshot_seeds": [0], "fewshot_l2": 1e-4},
        })
        report = run_pipeline(config)
        eval_acc = next(r.value for r in report.records
                        if r.task == "eval" and r.metric == "accuracy")
        fs_acc = next(r.value for r in report.records
                      if r.task == "fewshot" and r.metric == "accuracy")
        assert abs(eval_acc - fs_acc) < 1e-9

    def test_single_seed_has_zero_std(self, tmp_path, rng):
        k = 2
        x_train, y_train = make_blobs(rng, 4.0 * np.eye(k), n_per_class=10, scale=0.5)
        x_test, y_test = make_blobs(rng, 4.0 * np.eye(k), n_per_class=10, scale=0.5)
        splits = {
            "train": {"role": "train", "embeddings": x_train, "labels": y_train},
            "test": {"role": "test", "embeddings": x_test, "labels": y_test},
        }
        path = write_manifest(tmp_path, "fs1", ["a", "b"], splits)
        config = RunConfig.from_doc({
            "manifest": str(path), "tasks": ["fewshot"],
            "options": {"shots": [2], "fewshot_seeds": [5]},
        })
        report = run_pipeline(config)
        stds = [r.value for r in report.records if r.metric.endswith("_std")]
        assert stds and all(v == 0.0 for v in stds)

    def test_one_shot_two_class_matches_direct_lbfgs(self, tmp_path, rng):
        x_train, y_train = make_blobs(rng, 4.0 * np.eye(2), n_per_class=6, scale=0.5)
        x_test, y_test = make_blobs(rng, 4.0 * np.eye(2), n_per_class=8, scale=0.5)
        splits = {
            "train": {"role": "train", "embeddings": x_train, "labels": y_train},
            "test": {"role": "test", "embeddings": x_test, "labels": y_test},
        }
        path = write_manifest(tmp_path, "fs2", ["a", "b"], splits)
        config = RunConfig.from_doc({
            "manifest": str(path), "tasks": ["fewshot"],
            "options": {"shots": [1], "fewshot_seeds": [3], "fewshot_l2": 0.01},
        })
        report = run_pipeline(config)
        got = next(r.value for r in report.records
                   if r.metric == "accuracy" and r.split == "1-shot")

        # independent oracle: same sampled pair, but the regularized logistic
        # fit comes from a plain gradient-descent loop, not L-BFGS
        from uqkit.heads import fewshot_sample
        from uqkit.heads.base import softmax as softmax64
        from uqkit.heads.logreg import multinomial_loss_grad

        m = load_manifest(path)
        xt = m.splits["train"].embeddings.astype(np.float64)
        yt = m.splits["train"].labels.astype(np.int64)
        idx = fewshot_sample(yt, 1, 3, num_classes=2)
        theta = np.zeros(2 * 2 + 2)
        for _ in range(500_000):
            _, g = multinomial_loss_grad(theta, xt[idx], yt[idx], 0.01, 2, 2)
            if np.abs(g).max() < 1e-12:
                break
            theta -= 0.5 * g
        w, b = theta[:4].reshape(2, 2), theta[4:]
        probs = softmax64(m.splits["test"].embeddings.astype(np.float64) @ w + b)
        expected = accuracy(PredictionBatch(probs, m.splits["test"].labels))
        assert got == pytest.approx(expected, abs=1e-12)


class TestZeroshot:
    def test_identical_in_and_ood_sets_are_chance(self, tmp_path, rng):
        emb = rng.standard_normal((30, 4))
        labels = rng.integers(0, 2, 30)
        splits = {
            "train": {"role": "train", "embeddings": rng.standard_normal((50, 4)),
                      "labels": rng.integers(0, 2, 50)},
            "test": {"role": "test", "embeddings": emb, "labels": labels},
            "ood": {"role": "semantic_shift", "embeddings": emb.copy(),
                    "labels": np.zeros(30, dtype=int)},
        }
        path = write_manifest(tmp_path, "zs", ["a", "b"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["zeroshot_osr"]})
        values = {r.metric: r.value for r in run_pipeline(config).records}
        assert values["osr_auroc[maha]"] == 0.5
        assert values["osr_auroc[rmaha]"] == 0.5

    def test_nuisance_fixture_rmaha_beats_maha(self, tmp_path):
        from conftest import nuisance_dim_osr_data

        train_x, train_y, test_x, ood_x = nuisance_dim_osr_data(seed=3)
        splits = {
            "train": {"role": "train", "embeddings": train_x, "labels": train_y},
            "test": {"role": "test", "embeddings": test_x,
                     "labels": np.zeros(len(test_x), dtype=int)},
            "ood": {"role": "semantic_shift", "embeddings": ood_x,
                    "labels": np.zeros(len(ood_x), dtype=int)},
        }
        path = write_manifest(tmp_path, "zs2", ["a", "b"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["zeroshot_osr"]})
        values = {r.metric: r.value for r in run_pipeline(config).records}
        assert values["osr_auroc[rmaha]"] >= values["osr_auroc[maha]"]

    def test_single_class_train_records_degeneracy(self, tmp_path, rng):
        splits = {
            "train": {"role": "train", "embeddings": rng.standard_normal((30, 3)),
                      "labels": np.zeros(30, dtype=int)},
            "test": {"role": "test", "embeddings": rng.standard_normal((10, 3)),
                     "labels": rng.integers(0, 2, 10)},
            "ood": {"role": "semantic_shift",
                    "embeddings": 5 + rng.standard_normal((10, 3)),
                    "labels": np.zeros(10, dtype=int)},
        }
        path = write_manifest(tmp_path, "zs3", ["a", "b"], splits)
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["zeroshot_osr"]})
        report = run_pipeline(config)
        rmaha = next(r for r in report.records if r.metric == "osr_auroc[rmaha]")
        assert "rmd-degenerate-single-class" in rmaha.flags


class TestScore:
    def _record(self, task, dataset, metric, value, lo=0.0, hi=1.0, higher=True):
        return MetricRecord(task=task, dataset=dataset, split="test", metric=metric,
                            value=value, higher_is_better=higher,
                            lower_bound=lo, upper_bound=hi)

    def test_all_perfect_scores_100(self):
        records = [
            self._record("eval", "d", "accuracy", 1.0),
            self._record("calibration", "d", "ece", 0.0, higher=False),
            self._record("fewshot", "d", "accuracy", 1.0),
        ]
        result = compute_reliability(records)
        assert result["overall"] == pytest.approx(100.0)
        assert set(result["areas"]) == set(
            ("uncertainty", "robust_generalization", "adaptation")
        )
        assert all(v == pytest.approx(100.0) for v in result["areas"].values())

    def test_uncertainty_only_flags_missing_areas(self):
        records = [self._record("osr", "d", "osr_auroc[msp]", 0.9)]
        result = compute_reliability(records)
        assert result["missing_areas"] == ["robust_generalization", "adaptation"]

    def test_mixed_fixture_matches_hand_normalization(self):
        ln4 = math.log(4)
        records = [
            self._record("eval", "d1", "accuracy", 0.8),                   # -> 80
            self._record("eval", "d1", "nll", 0.25 * ln4, hi=ln4, higher=False),  # -> 75
            self._record("calibration", "d2", "ece", 0.1, higher=False),   # -> 90
            self._record("fewshot", "d2", "accuracy", 0.5),                # -> 50
        ]
        result = compute_reliability(records)
        # within-dataset means first: d1 -> 77.5, d2 -> 70; overall mean 73.75
        assert result["overall"] == pytest.approx(73.75)
        assert result["areas"]["robust_generalization"] == pytest.approx(77.5)
        assert result["areas"]["uncertainty"] == pytest.approx(90.0)
        assert result["areas"]["adaptation"] == pytest.approx(50.0)

    def test_std_records_are_excluded(self):
        records = [
            self._record("fewshot", "d", "accuracy", 1.0),
            self._record("fewshot", "d", "accuracy_std", 0.4, higher=False),
        ]
        assert compute_reliability(records)["overall"] == pytest.approx(100.0)


class TestDeterminismAndTasks:
    def test_identical_config_and_seed_give_identical_bytes(self, tmp_path, rng):
        manifest = golden_manifest(tmp_path, rng)
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            config = RunConfig.from_doc(golden_config(manifest, out))
            report = run_pipeline(config)
            report.write(out)
            outputs.append((out / "report.json").read_bytes())
        assert outputs[0] == outputs[1]

    def test_disabling_one_task_leaves_others_untouched(self, tmp_path, rng):
        manifest = golden_manifest(tmp_path, rng)
        full = run_pipeline(RunConfig.from_doc(golden_config(
            manifest, tasks=["eval", "calibration", "osr"])))
        partial = run_pipeline(RunConfig.from_doc(golden_config(
            manifest, tasks=["eval", "osr"])))

        def key(r):
            return (r.task, r.dataset, r.split, r.head, r.metric, r.value)

        full_eval = sorted(key(r) for r in full.records if r.task in ("eval", "osr"))
        partial_eval = sorted(key(r) for r in partial.records)
        assert full_eval == partial_eval


class TestPredictors:
    def test_stored_logits_predictor_used_without_heads(self, tmp_path, rng):
        labels = rng.integers(0, 2, 10)
        path = write_manifest(
            tmp_path, "nl", ["a", "b"],
            {"test": {"role": "test", "logits": rng.standard_normal((10, 2)),
                      "labels": labels}},
        )
        config = RunConfig.from_doc({"manifest": str(path), "tasks": ["eval"]})
        manifest = load_manifest(config.manifest_path)
        predictors = build_predictors(config, manifest)
        assert [p.name for p in predictors] == ["logits"]

    def test_head_training_is_seed_offset_per_head(self, tmp_path, rng):
        x, y = make_blobs(rng, 3.0 * np.eye(2), n_per_class=20, scale=0.6)
        path = write_manifest(
            tmp_path, "hh", ["a", "b"],
            {"train": {"role": "train", "embeddings": x, "labels": y},
             "test": {"role": "test", "embeddings": x, "labels": y}},
        )
        config = RunConfig.from_doc({
            "manifest": str(path), "tasks": ["eval"],
            "heads": [
                {"name": "l0", "kind": "linear", "train": {"epochs": 2}},
                {"name": "l1", "kind": "linear", "train": {"epochs": 2}},
            ],
        })
        manifest = load_manifest(config.manifest_path)
        p0, p1 = build_predictors(config, manifest)
        assert not np.array_equal(p0.head.w, p1.head.w)


class TestCli:
    def _run(self, *argv):
        return subprocess.run(
            [sys.executable, "-m", "uqkit.cli", *argv],
            capture_output=True, text=True,
        )

    def test_eval_roundtrip_and_exit_codes(self, tmp_path, rng):
        manifest = golden_manifest(tmp_path, rng)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(golden_config(
            manifest, tasks=["eval", "calibration", "score"])))
        out = tmp_path / "out"
        res = self._run("eval", "--config", str(cfg_path), "--out", str(out))
        assert res.returncode == 0, res.stderr
        assert (out / "report.json").exists()
        assert (out / "records.csv").exists()
        header = (out / "records.csv").read_text().splitlines()[0]
        assert header == "task,dataset,split,metric,value"

    def test_validation_failure_is_exit_2(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"manifest": "missing.json", "tasks": ["eval"]}))
        res = self._run("eval", "--config", str(cfg_path), "--out", str(tmp_path / "o"))
        assert res.returncode == 2
        assert "error:" in res.stderr

    def test_train_head_then_load_by_path(self, tmp_path, rng):
        manifest = golden_manifest(tmp_path, rng)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(golden_config(manifest, tasks=["eval"])))
        heads_dir = tmp_path / "heads"
        res = self._run("train-head", "--config", str(cfg_path), "--out", str(heads_dir))
        assert res.returncode == 0, res.stderr
        assert (heads_dir / "lin" / "head.json").exists()

        saved_cfg = json.loads(cfg_path.read_text())
        saved_cfg["heads"] = [{"name": "lin", "path": str(heads_dir / "lin")}]
        cfg2 = tmp_path / "config2.json"
        cfg2.write_text(json.dumps(saved_cfg))
        out = tmp_path / "out2"
        res = self._run("eval", "--config", str(cfg2), "--out", str(out))
        assert res.returncode == 0, res.stderr

    def test_score_subcommand_aggregates_and_checks_hashes(self, tmp_path, rng):
        manifest = golden_manifest(tmp_path, rng)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(golden_config(
            manifest, tasks=["eval", "osr", "fewshot", "zeroshot_osr"])))
        out_eval = tmp_path / "out_eval"
        out_osr = tmp_path / "out_osr"
        assert self._run("eval", "--config", str(cfg_path), "--out",
                         str(out_eval)).returncode == 0
        assert self._run("osr", "--config", str(cfg_path), "--out",
                         str(out_osr)).returncode == 0
        res = self._run("score", str(out_eval / "report.json"),
                        str(out_osr / "report.json"), "--out", str(tmp_path / "sc"))
        assert res.returncode == 0, res.stderr
        score = json.loads((tmp_path / "sc" / "score.json").read_text())
        assert 0.0 <= score["overall"] <= 100.0
        assert "uncertainty" in score["areas"]

        # different config -> different hash -> refuse
        other_cfg = golden_config(manifest, tasks=["eval"], seed=99)
        cfg3 = tmp_path / "config3.json"
        cfg3.write_text(json.dumps(other_cfg))
        out3 = tmp_path / "out3"
        assert self._run("eval", "--config", str(cfg3), "--out",
                         str(out3)).returncode == 0
        res = self._run("score", str(out_eval / "report.json"),
                        str(out3 / "report.json"), "--out", str(tmp_path / "sc2"))
        assert res.returncode == 2
        assert "different config hashes" in res.stderr

    def test_active_learn_cli(self, tmp_path, rng):
        k = 3
        x, y = make_blobs(rng, 4.0 * np.eye(k), n_per_class=60, scale=0.6)
        xt, yt = make_blobs(rng, 4.0 * np.eye(k), n_per_class=20, scale=0.6)
        path = write_manifest(
            tmp_path, "al", [f"c{i}" for i in range(k)],
            {"train": {"role": "train", "embeddings": x, "labels": y},
             "test": {"role": "test", "embeddings": xt, "labels": yt}},
        )
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({
            "manifest": str(path),
            "tasks": ["active_learning"],
            "options": {"al": {"max_per_class_factor": 5,
                               "train": {"epochs": 10, "lr": 0.1}}},
            "seed": 3,
        }))
        out = tmp_path / "alout"
        res = self._run("active-learn", "--config", str(cfg_path),
                        "--out", str(out), "--strategy", "margin")
        assert res.returncode == 0, res.stderr
        curve_lines = (out / "al_curve.csv").read_text().splitlines()
        assert curve_lines[0] == "num_labels,accuracy"
        assert len(curve_lines) > 2

"""Shared fixtures: synthetic datasets and on-disk manifest builders."""

from __future__ import annotations

import json

import numpy as np
import pytest

from uqkit.tensors import save_tensor


def make_blobs(rng, means, n_per_class, scale=0.5):
    """Gaussian blobs around the given class means. Returns (X, y) shuffled."""
    means = np.asarray(means, dtype=np.float64)
    xs, ys = [], []
    for c, mu in enumerate(means):
        xs.append(mu + scale * rng.standard_normal((n_per_class, means.shape[1])))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(x.shape[0])
    return x[perm], y[perm]


def random_probs(rng, n, k):
    """Random probability rows via normalized exponentials."""
    raw = rng.exponential(size=(n, k))
    return raw / raw.sum(axis=1, keepdims=True)


def write_manifest(tmp_path, name, classes, splits):
    """Write UBT tensors plus a manifest document.

    splits maps split-name -> dict with 'role' and any of the array-valued
    keys embeddings/logits/labels/soft_labels/groups.
    """
    doc = {"name": name, "classes": list(classes), "splits": {}}
    for split_name, spec in splits.items():
        entry = {"role": spec["role"]}
        for column in ("embeddings", "logits", "labels", "soft_labels", "groups"):
            if column in spec:
                fname = f"{split_name}_{column}.ubt"
                arr = spec[column]
                if column in ("labels", "groups"):
                    arr = np.asarray(arr, dtype=np.int32)
                else:
                    arr = np.asarray(arr, dtype=np.float32)
                save_tensor(arr, tmp_path / fname)
                entry[column] = fname
        doc["splits"][split_name] = entry
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def nuisance_dim_osr_data(seed, n_train_per_class=200, n_eval=150):
    """Two tight clusters plus high-variance nuisance dimensions.

    The in-distribution data varies widely along 8 nuisance dimensions that
    carry no class signal; the held-out shifted cluster sits between and above
    the class means but is far more concentrated along the nuisance
    dimensions, which confounds the raw class-conditional distance.
    Returns (train_X, train_y, test_X, ood_X).
    """
    rng_ = np.random.default_rng(seed)
    d_noise, cluster_sd, noise_sd = 8, 0.5, 10.0
    means = np.array([[-1.0, 0.0], [1.0, 0.0]])

    def sample_ind(n, cls):
        disc = means[cls] + cluster_sd * rng_.standard_normal((n, 2))
        noise = noise_sd * rng_.standard_normal((n, d_noise))
        return np.hstack([disc, noise])

    train_x = np.concatenate([sample_ind(n_train_per_class, c) for c in (0, 1)])
    train_y = np.repeat([0, 1], n_train_per_class)

    disc = np.array([0.0, 0.9]) + cluster_sd * rng_.standard_normal((n_eval, 2))
    noise = rng_.standard_normal((n_eval, d_noise))
    ood_x = np.hstack([disc, noise])

    cls = rng_.integers(0, 2, n_eval)
    disc = means[cls] + cluster_sd * rng_.standard_normal((n_eval, 2))
    noise = noise_sd * rng_.standard_normal((n_eval, d_noise))
    test_x = np.hstack([disc, noise])
    return train_x, train_y, test_x, ood_x


def duplicated_easy_points_data(seed, k=10, n_pool=2000, n_test=1500):
    """Active-learning pool where 90% of points are near-duplicates sitting a
    fixed offset away from their class mean.

    Training on duplicates alone misplaces the decision boundaries, capping
    test accuracy below the 95% target; the informative 10% are drawn from
    the true class distributions and fix the boundaries. Class means form a
    scaled simplex so the geometry is identical across seeds.
    Returns (pool_X, pool_y, test_X, test_y).
    """
    rng_ = np.random.default_rng(seed)
    means = 4.0 * np.eye(k)
    off_rng = np.random.default_rng(999)  # bias directions shared across seeds
    offsets = off_rng.standard_normal((k, k))
    offsets *= 2.2 / np.linalg.norm(offsets, axis=1, keepdims=True)

    n_easy = int(0.9 * n_pool)
    cls_e = rng_.integers(0, k, n_easy)
    x_easy = means[cls_e] + offsets[cls_e] + 0.05 * rng_.standard_normal((n_easy, k))
    cls_h = rng_.integers(0, k, n_pool - n_easy)
    x_hard = means[cls_h] + rng_.standard_normal((n_pool - n_easy, k))
    x = np.vstack([x_easy, x_hard])
    y = np.concatenate([cls_e, cls_h])
    perm = rng_.permutation(n_pool)

    cls_t = rng_.integers(0, k, n_test)
    x_test = means[cls_t] + rng_.standard_normal((n_test, k))
    return x[perm], y[perm], x_test, cls_t


def labels_to_reach(curve, target=0.95):
    """First label count at which the accuracy curve hits the target."""
    for num_labels, acc in curve:
        if acc >= target:
            return num_labels
    return float("inf")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

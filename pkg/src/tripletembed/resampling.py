"""Classical multi-class oversampling baselines: Global-CS, Static-SMOTE, MDO.

All three equalize class sizes by adding rows; original rows are kept
byte-identical and every added row is tagged as a duplicate or synthetic.
Each function is deterministic for a given seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

PREPROCESSORS = ("none", "global_cs", "static_smote", "mdo")


@dataclass
class ResampledDataset(Dataset):
    """Dataset plus a per-row origin tag: original, duplicate or synthetic."""

    origin: np.ndarray = None


def _as_resampled(dataset: Dataset, new_rows, new_labels, new_origin) -> ResampledDataset:
    n = dataset.n
    features = np.vstack([dataset.features] + new_rows) if new_rows else dataset.features.copy()
    labels = np.concatenate([dataset.labels, np.asarray(new_labels, dtype=np.int64)])
    origin = np.concatenate([np.full(n, "original", dtype=object),
                             np.asarray(new_origin, dtype=object)])
    counts = np.bincount(labels, minlength=dataset.n_classes)
    return ResampledDataset(features, labels, list(dataset.class_names), counts,
                            list(dataset.feature_names), origin=origin)


def global_cs(dataset: Dataset, rng) -> ResampledDataset:
    """Random oversampling that equalizes every class to the majority size.

    Each member of class c is duplicated floor(n_max / n_c) times in total;
    the remaining n_max mod n_c extra copies go to members drawn uniformly
    without replacement.
    """
    counts = dataset.class_counts
    n_max = int(counts.max())
    new_rows, new_labels, new_origin = [], [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        n_c = len(idx)
        if n_c == 0 or n_c == n_max:
            continue
        extra_per_member = n_max // n_c - 1
        remainder = n_max % n_c
        copies = np.full(n_c, extra_per_member)
        lucky = rng.choice(n_c, size=remainder, replace=False)
        copies[lucky] += 1
        for i, reps in zip(idx, copies):
            for _ in range(int(reps)):
                new_rows.append(dataset.features[i:i + 1])
                new_labels.append(c)
                new_origin.append("duplicate")
    return _as_resampled(dataset, new_rows, new_labels, new_origin)


def smote_interpolate(x, neighbor, rng):
    """Point drawn uniformly on the segment from x toward neighbor.

    Returns x + u * (neighbor - x) with u uniform on [0, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    neighbor = np.asarray(neighbor, dtype=np.float64)
    if x.shape != neighbor.shape:
        raise ValueError("endpoints must share a dimension")
    return x + rng.random() * (neighbor - x)


def static_smote(dataset: Dataset, rng, k_smote: int = 5) -> ResampledDataset:
    """Iterated SMOTE: C rounds, each augmenting the currently smallest class.

    Every round selects the class with the fewest current members (ties to the
    lowest class id) and adds as many synthetic rows as that class ORIGINALLY
    had. A synthetic row interpolates a uniformly chosen current member with
    one of its k_smote nearest same-class neighbors (input space, Euclidean).
    A class with a single member is duplicated instead of interpolated.
    """
    original_counts = dataset.class_counts.astype(int)
    current = original_counts.copy()
    members: list[list[np.ndarray]] = [
        [dataset.features[i] for i in np.flatnonzero(dataset.labels == c)]
        for c in range(dataset.n_classes)
    ]
    new_rows, new_labels, new_origin = [], [], []
    for _ in range(dataset.n_classes):
        c = int(np.argmin(current))
        to_add = int(original_counts[c])
        pool = members[c]
        for _ in range(to_add):
            if len(pool) < 2:
                sample = pool[0].copy()
                origin = "duplicate"
            else:
                base_j = int(rng.integers(len(pool)))
                stack = np.array(pool)
                d = np.sqrt(np.sum((stack - stack[base_j]) ** 2, axis=1))
                d[base_j] = np.inf  # exclude the member itself, coincident rows stay
                nearest = np.argsort(d, kind="stable")[:k_smote]
                pick = int(nearest[int(rng.integers(len(nearest)))])
                sample = smote_interpolate(stack[base_j], stack[pick], rng)
                origin = "synthetic"
            pool.append(sample)
            new_rows.append(sample.reshape(1, -1))
            new_labels.append(c)
            new_origin.append(origin)
        current[c] += to_add
    return _as_resampled(dataset, new_rows, new_labels, new_origin)


def mdo(dataset: Dataset, rng, oversample_to: int = None) -> ResampledDataset:
    """Mahalanobis-distance oversampling toward the majority count.

    Per minority class, members are centered and the class covariance
    eigendecomposed (eigenvalues clamped below at 1e-9). Each synthetic sample
    takes a uniformly chosen seed member, keeps its squared Mahalanobis
    distance r2, and redistributes r2 over the eigen-coordinates uniformly on
    the simplex with random signs before mapping back. Classes with fewer than
    3 members fall back to duplication.
    """
    target = int(oversample_to or dataset.class_counts.max())
    new_rows, new_labels, new_origin = [], [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        needed = target - len(idx)
        if needed <= 0:
            continue
        if len(idx) < 3:
            for _ in range(needed):
                i = idx[int(rng.integers(len(idx)))]
                new_rows.append(dataset.features[i:i + 1])
                new_labels.append(c)
                new_origin.append("duplicate")
            continue
        x = dataset.features[idx]
        mu = x.mean(axis=0)
        centered = x - mu
        cov = centered.T @ centered / len(idx)
        evals, evecs = np.linalg.eigh(cov)
        evals = np.maximum(evals, 1e-9)
        coords = centered @ evecs
        d = x.shape[1]
        for _ in range(needed):
            z = coords[int(rng.integers(len(idx)))]
            r2 = float(np.sum(z * z / evals))
            shares = rng.dirichlet(np.ones(d))
            signs = rng.choice([-1.0, 1.0], size=d)
            z_new = signs * np.sqrt(shares * r2 * evals)
            new_rows.append((evecs @ z_new + mu).reshape(1, -1))
            new_labels.append(c)
            new_origin.append("synthetic")
    return _as_resampled(dataset, new_rows, new_labels, new_origin)


def apply_preprocessor(name: str, dataset: Dataset, rng) -> Dataset:
    """Dispatch a preprocessor by its config name ('none' is the identity)."""
    if name == "none":
        return dataset
    if name == "global_cs":
        return global_cs(dataset, rng)
    if name == "static_smote":
        return static_smote(dataset, rng)
    if name == "mdo":
        return mdo(dataset, rng)
    raise ValueError(f"unknown preprocessor {name!r}")

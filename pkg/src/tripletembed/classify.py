"""Downstream classifiers (1-NN, LDA, CART) and imbalance-aware metrics.

These are deliberately small, deterministic implementations: every argmax
tie breaks toward the smallest class id, nearest-neighbor ties toward the
smallest training index, and tree split ties toward the lowest feature index
and threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

CLASSIFIERS = ("knn1", "lda", "tree")


def knn1(train: Dataset, test_features) -> np.ndarray:
    """Label of the Euclidean-nearest training row for each test row."""
    test = np.asarray(test_features, dtype=np.float64)
    x = train.features
    sq = np.sum(x * x, axis=1)
    d2 = sq[None, :] - 2.0 * test @ x.T + np.sum(test * test, axis=1)[:, None]
    return train.labels[np.argmin(d2, axis=1)]


@dataclass
class FittedLDA:
    class_means: np.ndarray
    pooled_covariance_inverse: np.ndarray
    log_priors: np.ndarray


def lda_fit(train: Dataset) -> FittedLDA:
    """Pooled-covariance linear discriminant with a small ridge.

    The within-class covariance is averaged with 1/(n - C) scaling and
    regularized by lambda*I, lambda = 1e-6 * trace / d, before inversion;
    one-hot data routinely makes the raw pooled covariance singular.
    """
    x, y = train.features, train.labels
    n, d = x.shape
    c = train.n_classes
    if c < 2:
        raise ValueError("LDA needs at least 2 classes")
    if n <= c:
        raise ValueError("LDA needs more rows than classes")
    means = np.empty((c, d))
    pooled = np.zeros((d, d))
    counts = np.empty(c)
    for ci in range(c):
        xc = x[y == ci]
        counts[ci] = len(xc)
        means[ci] = xc.mean(axis=0)
        centered = xc - means[ci]
        pooled += centered.T @ centered
    pooled /= n - c
    ridge = 1e-6 * np.trace(pooled) / d
    cov_inv = np.linalg.inv(pooled + ridge * np.eye(d))
    return FittedLDA(means, cov_inv, np.log(counts / n))


def lda_predict(model: FittedLDA, test_features) -> np.ndarray:
    x = np.asarray(test_features, dtype=np.float64)
    coef = model.pooled_covariance_inverse @ model.class_means.T
    intercept = (-0.5 * np.sum(model.class_means * coef.T, axis=1)
                 + model.log_priors)
    scores = x @ coef + intercept
    return np.argmax(scores, axis=1).astype(np.int64)


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None
    class_mass: np.ndarray = None
    prediction: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class FittedTree:
    root: TreeNode
    min_samples_split: int = 4
    min_samples_leaf: int = 2
    n_classes: int = 0
    feature_count: int = 0
    node_count: int = field(default=0)


def _gini(mass: np.ndarray) -> float:
    total = mass.sum()
    if total <= 0:
        return 0.0
    p = mass / total
    return float(1.0 - np.sum(p * p))


def _best_split(x, y, w, n_classes, min_leaf):
    """Lowest weighted-Gini (feature, threshold); ties keep the first found.

    Thresholds are midpoints of consecutive distinct values; candidates must
    leave at least min_leaf samples on each side. Returns None when no valid
    candidate exists.
    """
    n, d = x.shape
    best = None  # (score, feature, threshold)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    weighted = onehot * w[:, None]
    total_mass = weighted.sum(axis=0)
    total = total_mass.sum()
    for f in range(d):
        order = np.argsort(x[:, f], kind="stable")
        vals = x[order, f]
        left_cum = np.cumsum(weighted[order], axis=0)
        for pos in range(min_leaf, n - min_leaf + 1):
            if vals[pos - 1] >= vals[pos]:
                continue
            left_mass = left_cum[pos - 1]
            right_mass = total_mass - left_mass
            wl, wr = left_mass.sum(), right_mass.sum()
            score = (wl * _gini(left_mass) + wr * _gini(right_mass)) / total
            if best is None or score < best[0]:
                best = (score, f, (vals[pos - 1] + vals[pos]) / 2.0)
    return best


def _grow(x, y, w, n_classes, min_split, min_leaf, counter) -> TreeNode:
    counter[0] += 1
    mass = np.bincount(y, weights=w, minlength=n_classes)
    node = TreeNode(class_mass=mass, prediction=int(np.argmax(mass)))
    if len(y) < min_split or len(np.unique(y)) == 1:
        return node
    best = _best_split(x, y, w, n_classes, min_leaf)
    if best is None:
        return node
    score, feature, threshold = best
    if _gini(mass) - score <= 0:
        return node
    go_left = x[:, feature] <= threshold
    node.feature = feature
    node.threshold = threshold
    node.left = _grow(x[go_left], y[go_left], w[go_left], n_classes,
                      min_split, min_leaf, counter)
    node.right = _grow(x[~go_left], y[~go_left], w[~go_left], n_classes,
                       min_split, min_leaf, counter)
    return node


def tree_fit(train: Dataset, min_samples_split: int = 4,
             min_samples_leaf: int = 2) -> FittedTree:
    """CART with class-balanced sample weights n / (C * n_c).

    Splits minimize the weighted Gini impurity; growth stops on purity,
    sample count below min_samples_split, no candidate leaving
    min_samples_leaf samples per side, or a non-positive impurity decrease.
    """
    x, y = train.features, train.labels
    counts = np.bincount(y, minlength=train.n_classes).astype(np.float64)
    w = np.zeros(len(y))
    present = counts > 0
    scale = len(y) / (train.n_classes * counts[present])
    for ci, s in zip(np.flatnonzero(present), scale):
        w[y == ci] = s
    counter = [0]
    root = _grow(x, y, w, train.n_classes, min_samples_split,
                 min_samples_leaf, counter)
    return FittedTree(root, min_samples_split, min_samples_leaf,
                      train.n_classes, x.shape[1], counter[0])


def tree_predict(model: FittedTree, test_features) -> np.ndarray:
    x = np.asarray(test_features, dtype=np.float64)
    out = np.empty(len(x), dtype=np.int64)
    for i, row in enumerate(x):
        node = model.root
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        out[i] = node.prediction
    return out


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        m[t, p] += 1
    return m


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Unweighted mean of per-class F1; any 0/0 ratio counts as 0.

    Classes absent from y_true still enter the average (with F1 = 0 unless
    they are also never predicted incorrectly, which is impossible).
    """
    m = confusion_matrix(y_true, y_pred, n_classes)
    f1s = np.zeros(n_classes)
    for c in range(n_classes):
        tp = m[c, c]
        fp = m[:, c].sum() - tp
        fn = m[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        if precision + recall > 0:
            f1s[c] = 2 * precision * recall / (precision + recall)
    return float(f1s.mean())


def gmean_multiclass(y_true, y_pred, n_classes: int) -> float:
    """Geometric mean of per-class recalls over all n_classes classes.

    Zero as soon as any class is entirely missed; fails when a class does
    not appear in y_true at all, because its recall is undefined.
    """
    m = confusion_matrix(y_true, y_pred, n_classes)
    support = m.sum(axis=1)
    if np.any(support == 0):
        missing = np.flatnonzero(support == 0).tolist()
        raise ValueError(f"classes {missing} absent from y_true; recall undefined")
    recalls = np.diag(m) / support
    return float(np.prod(recalls) ** (1.0 / n_classes))


def fit_predict(name: str, train: Dataset, test_features) -> np.ndarray:
    """Fit the named classifier on train and predict the given rows."""
    if name == "knn1":
        return knn1(train, test_features)
    if name == "lda":
        return lda_predict(lda_fit(train), test_features)
    if name == "tree":
        return tree_predict(tree_fit(train), test_features)
    raise ValueError(f"unknown classifier {name!r}")

"""Online triplet mining and the plain / imbalance-weighted triplet losses.

A triplet is (anchor, positive, negative): the positive shares the anchor's
class, the negative does not. The loss pushes the anchor-negative squared
distance at least a margin above the anchor-positive squared distance.
Mining happens online inside each mini-batch; distances are squared
Euclidean throughout this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .net import (EncoderParams, adam_init, adam_step, backward,
                  encode_forward, init_params)

STRATEGIES = ("hardest", "random_hard", "semi_hard")


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


@dataclass
class TripletConfig:
    margin: float = 1.0
    strategy: str = "random_hard"
    batch_size: int = 32

    def __post_init__(self):
        if not (math.isfinite(self.margin) and self.margin > 0):
            raise ValueError("margin must be finite and positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")


def class_weights(class_counts) -> np.ndarray:
    """Inverse class cardinality normalized to sum 1.

    w[c] = (1/n_c) / sum_j (1/n_j), so rarer classes get strictly larger
    weights and balanced classes get 1/C each.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValueError("all class counts must be at least 1")
    inv = 1.0 / counts
    return inv / inv.sum()


def pairwise_sq_dists(embeddings: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, (m x m)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    sq = np.sum(emb * emb, axis=1)
    d2 = sq[:, None] - 2.0 * emb @ emb.T + sq[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def mine_triplets(embeddings, labels, cfg: TripletConfig, rng) -> list[Triplet]:
    """Select one negative per ordered same-class (anchor, positive) pair.

    hardest     -- the negative closest to the anchor (ties to the smallest
                   batch index);
    random_hard -- uniform over negatives violating the margin constraint,
                   the pair is skipped when none do;
    semi_hard   -- uniform over negatives farther from the anchor than the
                   positive but still inside the margin, skipped when empty.

    A batch with fewer than two classes yields an empty list.
    """
    labels = np.asarray(labels)
    d2 = pairwise_sq_dists(embeddings)
    m = len(labels)
    triplets: list[Triplet] = []
    for a in range(m):
        same = labels == labels[a]
        pos = np.flatnonzero(same)
        pos = pos[pos != a]
        neg = np.flatnonzero(~same)
        if len(pos) == 0 or len(neg) == 0:
            continue
        d_neg = d2[a, neg]
        for p in pos:
            if cfg.strategy == "hardest":
                n = neg[int(np.argmin(d_neg))]
            else:
                bracket = d2[a, p] - d_neg + cfg.margin
                if cfg.strategy == "random_hard":
                    cands = neg[bracket > 0]
                else:  # semi_hard
                    cands = neg[(d_neg > d2[a, p]) & (bracket > 0)]
                if len(cands) == 0:
                    continue
                n = cands[rng.integers(len(cands))]
            triplets.append(Triplet(int(a), int(p), int(n)))
    return triplets


def _triplet_terms(embeddings, triplets):
    emb = np.asarray(embeddings, dtype=np.float64)
    idx = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    a, p, n = idx[:, 0], idx[:, 1], idx[:, 2]
    ap = emb[a] - emb[p]
    an = emb[a] - emb[n]
    return emb, idx, np.sum(ap * ap, axis=1), np.sum(an * an, axis=1), ap, an


def triplet_loss(embeddings, triplets, margin):
    """Hinge triplet objective and its gradient w.r.t. the embeddings.

    L = sum_i [ d2(a_i,p_i) - d2(a_i,n_i) + margin ]_+ ; satisfied triplets
    contribute zero loss and zero gradient.
    """
    grad = np.zeros_like(np.asarray(embeddings, dtype=np.float64))
    if len(triplets) == 0:
        return 0.0, grad
    emb, idx, d_ap, d_an, ap, an = _triplet_terms(embeddings, triplets)
    bracket = d_ap - d_an + margin
    active = bracket > 0
    loss = float(bracket[active].sum())
    _accumulate_grads(grad, idx, ap, an, np.where(active, 1.0, 0.0))
    return loss, grad


def weighted_triplet_loss(embeddings, triplets, margin, weights, labels):
    """Triplet loss with each hinge term scaled by its anchor-class weight.

    The weight sits inside the positive part, [ (d2_ap - d2_an + margin) * w ]_+,
    which equals w * [..]_+ because weights are strictly positive.
    """
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    grad = np.zeros_like(np.asarray(embeddings, dtype=np.float64))
    if len(triplets) == 0:
        return 0.0, grad
    emb, idx, d_ap, d_an, ap, an = _triplet_terms(embeddings, triplets)
    w = weights[labels[idx[:, 0]]]
    bracket = (d_ap - d_an + margin) * w
    active = bracket > 0
    loss = float(bracket[active].sum())
    _accumulate_grads(grad, idx, ap, an, np.where(active, w, 0.0))
    return loss, grad


def _accumulate_grads(grad, idx, ap, an, coeff):
    c = coeff[:, None]
    np.add.at(grad, idx[:, 0], 2.0 * c * (ap - an))
    np.add.at(grad, idx[:, 1], -2.0 * c * ap)
    np.add.at(grad, idx[:, 2], 2.0 * c * an)


def stratified_batches(labels, batch_size: int, rng) -> list[np.ndarray]:
    """Deal shuffled per-class index queues round-robin into mini-batches.

    Every class is spread as evenly as possible over ceil(n / batch_size)
    batches, so any batch holds at least two classes whenever the class
    counts permit it. The trailing partial batch is kept.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        return []
    n_batches = max(1, math.ceil(n / batch_size))
    buckets: list[list[int]] = [[] for _ in range(n_batches)]
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        for i, row in enumerate(idx):
            buckets[(offset + i) % n_batches].append(int(row))
        offset = (offset + len(idx)) % n_batches
    return [np.array(b, dtype=np.int64) for b in buckets if b]


def train_triplet_encoder(dataset: Dataset, cfg: TripletConfig = None,
                          hidden_sizes=(64, 32), embedding_dim=None,
                          epochs=200, learning_rate=1e-3, weighted=False,
                          seed=0) -> EncoderParams:
    """Train the encoder with online-mined triplets over stratified batches.

    Per epoch the training indices are reshuffled into class-stratified
    mini-batches; each batch is embedded, mined with cfg.strategy, and the
    (optionally imbalance-weighted) triplet loss gradient is applied with
    one Adam step. Deterministic for a given seed; epochs=0 returns the
    freshly initialized parameters.
    """
    cfg = cfg or TripletConfig()
    rng = np.random.default_rng(seed)
    d_in = dataset.features.shape[1]
    d_emb = embedding_dim or d_in
    params = init_params([d_in, *hidden_sizes, d_emb], rng)
    state = adam_init(params, learning_rate)
    w = class_weights(dataset.class_counts) if weighted else None
    for _ in range(epochs):
        for batch in stratified_batches(dataset.labels, cfg.batch_size, rng):
            x = dataset.features[batch]
            y = dataset.labels[batch]
            emb = encode_forward(params, x)
            triplets = mine_triplets(emb, y, cfg, rng)
            if weighted:
                _, d_emb_grad = weighted_triplet_loss(emb, triplets, cfg.margin, w, y)
            else:
                _, d_emb_grad = triplet_loss(emb, triplets, cfg.margin)
            grads = backward(params, x, d_emb_grad)
            params, state = adam_step(params, grads, state)
    return params


def triplet_satisfaction_rate(params: EncoderParams, dataset: Dataset,
                              cfg: TripletConfig = None, seed=0) -> float:
    """Fraction of in-batch triplets satisfying the margin constraint.

    Batches are rebuilt with the given seed exactly as in training, and for
    every ordered anchor-positive pair all negatives in the batch are
    enumerated; a triplet counts as satisfied when
    d2(a,p) + margin < d2(a,n). Returns 1.0 when no triplet exists.
    """
    cfg = cfg or TripletConfig()
    rng = np.random.default_rng(seed)
    satisfied = 0
    total = 0
    for batch in stratified_batches(dataset.labels, cfg.batch_size, rng):
        y = dataset.labels[batch]
        emb = encode_forward(params, dataset.features[batch])
        d2 = pairwise_sq_dists(emb)
        for a in range(len(batch)):
            same = y == y[a]
            pos = np.flatnonzero(same)
            pos = pos[pos != a]
            neg = np.flatnonzero(~same)
            if len(pos) == 0 or len(neg) == 0:
                continue
            for p in pos:
                total += len(neg)
                satisfied += int(np.sum(d2[a, p] + cfg.margin < d2[a, neg]))
    return satisfied / total if total else 1.0

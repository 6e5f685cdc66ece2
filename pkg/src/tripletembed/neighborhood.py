"""kNN-driven mini-batches and the safe-neighborhood loss family.

These losses operate on neighborhoods instead of sampled triplets: a batch is
built by drawing B anchors and pulling in each anchor's k nearest neighbors
in the current embedding space. Per anchor, distances to same-class neighbors
are minimized while distances to other-class neighbors are pushed up to a
dynamic margin set just above the farthest same-class neighbor. Distances are
plain (unsquared) Euclidean here.

Because the neighborhood structure is meaningless on a randomly initialized
encoder, training warm-starts from an autoencoder fit with MSE loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .net import (AutoencoderParams, EncoderParams, adam_init, adam_step,
                  autoencoder_backward, autoencoder_forward, backward,
                  encode_forward, init_autoencoder, mse_loss)

VARIANTS = ("safe_basic", "safe_weights", "safe_cutoff", "safe_mean_dists")


@dataclass
class NeighborLossConfig:
    k: int = 20
    batch_anchors: int = 16
    variant: str = "safe_basic"
    cutoff_threshold: float = 0.7

    def __post_init__(self):
        if self.k < 1 or self.batch_anchors < 1:
            raise ValueError("k and batch_anchors must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class NeighborhoodBatch:
    """Anchors with their kNN index lists and embedding-space distances.

    member_ids holds the sorted union of anchors and neighbors; row_of maps a
    training index to its row in the batch embedding matrix. distances[i] is
    sorted ascending and refers to anchor_ids[i]'s neighbors in neighbor_ids[i]
    order.
    """

    anchor_ids: np.ndarray
    neighbor_ids: np.ndarray
    distances: np.ndarray
    member_ids: np.ndarray
    row_of: dict[int, int]

    @property
    def k(self) -> int:
        return self.neighbor_ids.shape[1]


def build_knn_batch(params: EncoderParams, dataset: Dataset,
                    cfg: NeighborLossConfig, rng) -> NeighborhoodBatch:
    """Sample B anchors and collect each one's k nearest embedded neighbors.

    The full training set is embedded with the given encoder; neighbors are
    exact by Euclidean distance, never include the anchor itself, and distance
    ties break toward the smallest training index. Requires n >= k + 1.
    """
    n = dataset.n
    if n <= cfg.k:
        raise ValueError(f"need more than k={cfg.k} training points, got {n}")
    emb = encode_forward(params, dataset.features)
    anchors = np.sort(rng.choice(n, size=min(cfg.batch_anchors, n), replace=False))
    neighbor_ids = np.empty((len(anchors), cfg.k), dtype=np.int64)
    distances = np.empty((len(anchors), cfg.k))
    for i, a in enumerate(anchors):
        d = np.sqrt(np.sum((emb - emb[a]) ** 2, axis=1))
        d[a] = np.inf
        order = np.argsort(d, kind="stable")[: cfg.k]
        neighbor_ids[i] = order
        distances[i] = d[order]
    member_ids = np.unique(np.concatenate([anchors, neighbor_ids.ravel()]))
    row_of = {int(t): r for r, t in enumerate(member_ids)}
    return NeighborhoodBatch(anchors, neighbor_ids, distances, member_ids, row_of)


def dynamic_alpha(anchor: int, batch: NeighborhoodBatch, labels) -> float:
    """Margin for one anchor: farthest same-class neighbor distance + 1, else 1."""
    labels = np.asarray(labels)
    i = int(np.flatnonzero(batch.anchor_ids == anchor)[0])
    same = labels[batch.neighbor_ids[i]] == labels[anchor]
    if not same.any():
        return 1.0
    return float(batch.distances[i][same].max() + 1.0)


def safeness_weight(anchor: int, batch: NeighborhoodBatch, labels) -> float:
    """1 minus the same-class ratio of the anchor's k-neighborhood."""
    labels = np.asarray(labels)
    i = int(np.flatnonzero(batch.anchor_ids == anchor)[0])
    same = labels[batch.neighbor_ids[i]] == labels[anchor]
    return float(1.0 - same.sum() / batch.k)


def cutoff_weight(w_x: float, threshold: float = 0.7) -> float:
    """Safeness weight clipped at the cutoff threshold."""
    return min(w_x, threshold)


def safe_loss(embeddings, batch: NeighborhoodBatch, labels, variant: str,
              cfg: NeighborLossConfig, frozen_alphas=None):
    """One of the four neighborhood losses and its embedding gradient.

    embeddings is the (len(member_ids) x d) matrix for the batch members. Per
    anchor x with distances D to its recorded neighbors and margin a:

      safe_basic      sum_same D + sum_diff max(a - D, 0)
      safe_weights    safe_basic * w_x
      safe_cutoff     safe_basic * min(w_x, threshold)
      safe_mean_dists [ mean_same D - mean_diff min(D - a, 0) ] * w_x
                      (an empty group contributes 0 to its term)

    Margins are recomputed from the given embeddings unless frozen_alphas is
    supplied; either way they are treated as constants, so no gradient flows
    through the margin or through neighbor membership. Both anchors and
    neighbors receive gradient.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    rows_a = np.array([batch.row_of[int(t)] for t in batch.anchor_ids])
    rows_n = np.array([[batch.row_of[int(t)] for t in row]
                       for row in batch.neighbor_ids])
    diff_vec = emb[rows_a][:, None, :] - emb[rows_n]
    dist = np.sqrt(np.sum(diff_vec * diff_vec, axis=2))
    same = labels[batch.neighbor_ids] == labels[batch.anchor_ids][:, None]
    other = ~same
    k = batch.k
    if frozen_alphas is not None:
        alphas = np.asarray(frozen_alphas, dtype=np.float64)
    else:
        masked = np.where(same, dist, -np.inf)
        alphas = np.where(same.any(axis=1), masked.max(axis=1) + 1.0, 1.0)
    w = 1.0 - same.sum(axis=1) / k
    hinge = other & (dist < alphas[:, None])
    if variant == "safe_mean_dists":
        n_same = same.sum(axis=1)
        n_other = k - n_same
        inv_s = np.divide(1.0, n_same, out=np.zeros(len(rows_a)), where=n_same > 0)
        inv_o = np.divide(1.0, n_other, out=np.zeros(len(rows_a)), where=n_other > 0)
        term_same = np.sum(dist * same, axis=1) * inv_s
        term_other = -np.sum(np.minimum(dist - alphas[:, None], 0.0) * other,
                             axis=1) * inv_o
        loss = float(np.sum((term_same + term_other) * w))
        dl_ddist = (same * inv_s[:, None] - hinge * inv_o[:, None]) * w[:, None]
    else:
        per_anchor = (np.sum(dist * same, axis=1)
                      + np.sum((alphas[:, None] - dist) * hinge, axis=1))
        if variant == "safe_basic":
            coef = np.ones(len(rows_a))
        elif variant == "safe_weights":
            coef = w
        else:  # safe_cutoff
            coef = np.minimum(w, cfg.cutoff_threshold)
        loss = float(np.sum(per_anchor * coef))
        dl_ddist = (same.astype(np.float64) - hinge) * coef[:, None]
    # dD/de_anchor = (e_a - e_n)/D; coincident points get a zero subgradient
    safe_dist = np.where(dist > 1e-12, dist, 1.0)
    unit = diff_vec / safe_dist[..., None]
    unit[dist <= 1e-12] = 0.0
    g = dl_ddist[..., None] * unit
    grad = np.zeros_like(emb)
    np.add.at(grad, rows_a, g.sum(axis=1))
    np.add.at(grad, rows_n, -g)
    return loss, grad


def pretrain_autoencoder(dataset: Dataset, hidden_sizes=(64, 32),
                         embedding_dim=None, epochs=200, learning_rate=1e-3,
                         batch_size=32, seed=0) -> AutoencoderParams:
    """Fit encoder+decoder by reconstruction MSE over shuffled mini-batches."""
    rng = np.random.default_rng(seed)
    x = dataset.features
    d_in = x.shape[1]
    sizes = [d_in, *hidden_sizes, embedding_dim or d_in]
    ae = init_autoencoder(sizes, rng)
    state = adam_init(ae, learning_rate)
    for _ in range(epochs):
        order = rng.permutation(dataset.n)
        for start in range(0, dataset.n, batch_size):
            xb = x[order[start:start + batch_size]]
            recon, _ = autoencoder_forward(ae, xb)
            _, d_recon = mse_loss(recon, xb)
            grads = autoencoder_backward(ae, xb, d_recon)
            ae, state = adam_step(ae, grads, state)
    return ae


def train_safe_encoder(dataset: Dataset, cfg: NeighborLossConfig = None,
                       hidden_sizes=(64, 32), embedding_dim=None,
                       pretrain_epochs=200, epochs=200, learning_rate=1e-3,
                       pretrain_batch_size=32, seed=0,
                       pretrained: AutoencoderParams = None) -> EncoderParams:
    """Autoencoder warm start, then neighborhood-loss fine-tuning.

    Stage 1 trains (or takes) an autoencoder; stage 2 drops the decoder and,
    per step, rebuilds a kNN batch in the current embedding space, evaluates
    cfg.variant's loss, and applies one Adam step to all encoder parameters.
    One epoch is ceil(n / batch_anchors) steps. epochs=0 returns the
    pretrained encoder unchanged; deterministic for a given seed.
    """
    cfg = cfg or NeighborLossConfig()
    rng = np.random.default_rng(seed)
    if pretrained is None:
        pretrained = pretrain_autoencoder(dataset, hidden_sizes, embedding_dim,
                                          pretrain_epochs, learning_rate,
                                          pretrain_batch_size, rng)
    params = pretrained.encoder.copy()
    if epochs == 0:
        return params
    state = adam_init(params, learning_rate)
    steps_per_epoch = max(1, math.ceil(dataset.n / cfg.batch_anchors))
    for _ in range(epochs):
        for _ in range(steps_per_epoch):
            batch = build_knn_batch(params, dataset, cfg, rng)
            x = dataset.features[batch.member_ids]
            emb = encode_forward(params, x)
            _, d_emb = safe_loss(emb, batch, dataset.labels, cfg.variant, cfg)
            grads = backward(params, x, d_emb)
            params, state = adam_step(params, grads, state)
    return params


def mean_same_class_knn_ratio(params: EncoderParams, dataset: Dataset, k: int,
                              of_class: int = None) -> float:
    """Average same-class ratio of embedding-space k-neighborhoods.

    Computed over all points, or only the points of one class when of_class
    is given. Neighbor ties break toward the smallest training index.
    """
    emb = encode_forward(params, dataset.features)
    points = (np.arange(dataset.n) if of_class is None
              else np.flatnonzero(dataset.labels == of_class))
    ratios = np.empty(len(points))
    for j, i in enumerate(points):
        d = np.sqrt(np.sum((emb - emb[i]) ** 2, axis=1))
        d[i] = np.inf
        nn = np.argsort(d, kind="stable")[:k]
        ratios[j] = np.mean(dataset.labels[nn] == dataset.labels[i])
    return float(ratios.mean())

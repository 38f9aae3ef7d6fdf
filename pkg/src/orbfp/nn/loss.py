"""Triplet loss with semi-hard online mining."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor, _result

DIST_EPS = 1e-16


class DegenerateBatchError(ParameterError):
    """The batch has no valid triplet (a single class, or no class with two members)."""


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.maximum(np.einsum("ijk,ijk->ij", diff, diff), DIST_EPS))


def mine_semihard(dist: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Choose one negative per anchor-positive pair.

    For every ordered pair ``(a, p)`` with equal labels and ``a != p`` the
    negative is the closest one with ``d(a, n) > d(a, p)``; when no such
    negative exists the farthest negative is taken. Returns index arrays
    ``(a, p, n)``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size != dist.shape[0]:
        raise ParameterError("labels must be a vector matching the batch size")
    if np.unique(labels).size < 2:
        raise DegenerateBatchError("triplet mining needs at least two classes in the batch")
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        raise DegenerateBatchError("triplet mining needs a class with at least two members")
    a_idx, p_idx, n_idx = [], [], []
    for a in range(labels.size):
        pos = np.flatnonzero(same[a])
        if pos.size == 0:
            continue
        neg = np.flatnonzero(labels != labels[a])
        order = np.argsort(dist[a, neg], kind="stable")
        neg_sorted = dist[a, neg[order]]
        k = np.searchsorted(neg_sorted, dist[a, pos], side="right")
        chosen = np.where(k < neg.size, k, neg.size - 1)
        a_idx.append(np.full(pos.size, a))
        p_idx.append(pos)
        n_idx.append(neg[order[chosen]])
    return np.concatenate(a_idx), np.concatenate(p_idx), np.concatenate(n_idx)


def triplet_loss_semihard(embeddings: Tensor, labels, margin: float = 0.7) -> Tensor:
    """Mean over anchor-positive pairs of ``max(m + d(a,p) - d(a,n), 0)`` with L2 distances."""
    if margin <= 0:
        raise ParameterError("margin must be positive")
    x = embeddings.data
    dist = pairwise_distances(x)
    a, p, n = mine_semihard(dist, labels)
    per_pair = margin + dist[a, p] - dist[a, n]
    active = per_pair > 0
    count = a.size
    loss = np.array(np.sum(per_pair * active) / count, dtype=x.dtype)

    def back(g):
        w = float(g) * active.astype(x.dtype) / count
        gd = np.zeros_like(dist)
        np.add.at(gd, (a, p), w)
        np.add.at(gd, (a, n), -w)
        gd = gd + gd.T  # d is symmetric in its two arguments
        coef = gd / dist
        np.fill_diagonal(coef, 0.0)
        gx = coef.sum(axis=1)[:, None] * x - coef @ x
        return (gx,)

    return _result(loss, (embeddings,), back)

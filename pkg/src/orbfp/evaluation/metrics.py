"""Verification metrics on distance scores.

Conventions: scores are L2 distances, smaller means more similar; a pair is
accepted at threshold ``t`` when ``d <= t``; the positive class is "same
transmitter". As the threshold grows both FPR and TPR are nondecreasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import ParameterError

EVAL_BATCH = 1024


@dataclass(frozen=True)
class RocCurve:
    """ROC over distance thresholds.

    ``thresholds`` is increasing and starts at ``-inf`` (accept nothing), so
    the curve runs from (0, 0) to (1, 1).
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    n_pos: int
    n_neg: int

    @property
    def fnr(self) -> np.ndarray:
        return 1.0 - self.tpr


@dataclass(frozen=True)
class VerificationDecision:
    mean_anchor_distance: float
    threshold: float
    accept: bool


def roc_from_scores(pos: np.ndarray, neg: np.ndarray) -> RocCurve:
    """ROC for positive-pair and negative-pair distances."""
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ParameterError("ROC needs at least one positive and one negative score")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size, bool), np.zeros(neg.size, bool)])
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(is_pos[order])
    fp = np.cumsum(~is_pos[order])
    last = np.r_[s[1:] != s[:-1], True]  # last index of each distinct score
    thresholds = np.r_[-np.inf, s[last]]
    tpr = np.r_[0.0, tp[last] / pos.size]
    fpr = np.r_[0.0, fp[last] / neg.size]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocCurve(thresholds, fpr, tpr, auc, int(pos.size), int(neg.size))


def auc_rank(pos: np.ndarray, neg: np.ndarray) -> float:
    """Mann-Whitney AUC: P(d_pos < d_neg) + 0.5 P(d_pos == d_neg)."""
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    ranks = rankdata(-np.concatenate([pos, neg]))  # large rank = small distance
    r_pos = ranks[: pos.size].sum()
    u = r_pos - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def cross_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All L2 distances between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(d2, 0.0))


def pairwise_scores(embeddings: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances and same-label flags of the ``(N^2 - N) / 2`` unordered pairs ``i < j``."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.size:
        raise ParameterError("embeddings must be (N, D) with one label per row")
    if x.shape[0] < 2:
        raise ParameterError("need at least two embeddings")
    iu, ju = np.triu_indices(x.shape[0], k=1)
    dist = cross_distances(x, x)[iu, ju]
    return dist, labels[iu] == labels[ju]


def pairwise_roc(embeddings: np.ndarray, labels: np.ndarray) -> RocCurve:
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ParameterError("pairwise ROC needs at least two classes")
    dist, same = pairwise_scores(embeddings, labels)
    return roc_from_scores(dist[same], dist[~same])


def batch_slices(n: int, batch: int = EVAL_BATCH) -> list[slice]:
    """Consecutive evaluation batches of ``batch`` rows; a short remainder is kept."""
    return [slice(i, min(i + batch, n)) for i in range(0, n, batch)]


def batched_pair_scores(embeddings, labels, batch: int = EVAL_BATCH):
    """Pair distances within consecutive batches, with their row indices."""
    out_d, out_same, out_i, out_j = [], [], [], []
    for sl in batch_slices(len(labels), batch):
        if sl.stop - sl.start < 2:
            continue
        d, same = pairwise_scores(embeddings[sl], np.asarray(labels)[sl])
        iu, ju = np.triu_indices(sl.stop - sl.start, k=1)
        out_d.append(d)
        out_same.append(same)
        out_i.append(iu + sl.start)
        out_j.append(ju + sl.start)
    if not out_d:
        raise ParameterError("need at least two embeddings")
    return np.concatenate(out_d), np.concatenate(out_same), np.concatenate(out_i), np.concatenate(out_j)


def batched_pairwise_roc(embeddings, labels, batch: int = EVAL_BATCH) -> RocCurve:
    d, same, _, _ = batched_pair_scores(embeddings, labels, batch)
    if same.all() or not same.any():
        raise ParameterError("pairwise ROC needs both same- and different-label pairs")
    return roc_from_scores(d[same], d[~same])


def eer(curve: RocCurve) -> tuple[float, float]:
    """Equal error rate ``(threshold, eer)``.

    Finds the first curve segment where ``FPR - FNR`` changes sign and
    interpolates linearly along it.
    """
    fpr, fnr, thr = curve.fpr, curve.fnr, curve.thresholds
    if fpr.size < 2:
        raise ParameterError("degenerate ROC curve")
    diff = fpr - fnr  # -1 at the start, +1 at the end
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(thr[k]) if np.isfinite(thr[k]) else float(thr[k + 1]), float(fpr[k])
    d0, d1 = diff[k - 1], diff[k]
    w = d0 / (d0 - d1)
    value = float((1 - w) * fpr[k - 1] + w * fpr[k])
    t0 = thr[k - 1] if np.isfinite(thr[k - 1]) else thr[k]
    return float((1 - w) * t0 + w * thr[k]), value


def accuracy_at(pos: np.ndarray, neg: np.ndarray, threshold: float) -> float:
    """Fraction of pairs classified correctly by ``d <= threshold``."""
    correct = np.count_nonzero(np.asarray(pos) <= threshold) + np.count_nonzero(np.asarray(neg) > threshold)
    total = np.size(pos) + np.size(neg)
    return float(correct / total) if total else float("nan")


# --- anchored verification -------------------------------------------------------


def anchored_verify(embedding: np.ndarray, anchors: np.ndarray, threshold: float) -> VerificationDecision:
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    if anchors.shape[0] == 0 or anchors.size == 0:
        raise ParameterError("anchored verification needs at least one anchor")
    d = float(np.mean(np.linalg.norm(anchors - np.asarray(embedding, dtype=np.float64), axis=1)))
    return VerificationDecision(d, float(threshold), d <= threshold)


def anchored_scores(embeddings, labels, k: int, rng: np.random.Generator, n_trials: int | None = None):
    """Genuine and impostor mean-anchor distances.

    For every probe (or ``n_trials`` random probes) one genuine trial uses
    ``k`` random anchors of the probe's own class (excluding the probe) and
    one impostor trial uses ``k`` random anchors of a random other class.
    """
    if k < 1:
        raise ParameterError("k must be at least 1")
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ParameterError("anchored ROC needs at least two classes")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    if min(m.size for m in members.values()) < k + 1:
        raise ParameterError(f"every class needs at least {k + 1} members for k={k}")
    probes = np.arange(labels.size) if n_trials is None else rng.choice(labels.size, n_trials, replace=False)
    genuine = np.empty(probes.size)
    impostor = np.empty(probes.size)
    for t, i in enumerate(probes):
        own = members[labels[i]]
        own = own[own != i]
        a = x[rng.choice(own, k, replace=False)]
        genuine[t] = np.mean(np.linalg.norm(a - x[i], axis=1))
        others = classes[classes != labels[i]]
        c = others[rng.integers(others.size)]
        a = x[rng.choice(members[c], k, replace=False)]
        impostor[t] = np.mean(np.linalg.norm(a - x[i], axis=1))
    return genuine, impostor


def anchored_roc(embeddings, labels, k: int, seed: int = 0, n_trials: int | None = None) -> RocCurve:
    g, i = anchored_scores(embeddings, labels, k, np.random.default_rng(seed), n_trials)
    return roc_from_scores(g, i)


# --- spoofing --------------------------------------------------------------------


def spoof_scores(real_emb, real_labels, spoof_emb, spoof_labels):
    """Per satellite present in both sets: real-real distances (positives) and
    real-spoof distances (negatives)."""
    real_emb = np.asarray(real_emb, dtype=np.float64)
    spoof_emb = np.asarray(spoof_emb, dtype=np.float64)
    real_labels = np.asarray(real_labels)
    spoof_labels = np.asarray(spoof_labels)
    shared = np.intersect1d(real_labels, spoof_labels)
    if shared.size == 0:
        raise ParameterError("no satellite has both real and spoofed records")
    pos, neg = [], []
    for s in shared:
        r = real_emb[real_labels == s]
        f = spoof_emb[spoof_labels == s]
        if r.shape[0] >= 2:
            pos.append(pairwise_scores(r, np.zeros(r.shape[0]))[0])
        neg.append(cross_distances(r, f).ravel())
    if not pos:
        raise ParameterError("spoof ROC needs a satellite with at least two real records")
    return np.concatenate(pos), np.concatenate(neg)


def spoof_roc_from_embeddings(real_emb, real_labels, spoof_emb, spoof_labels) -> RocCurve:
    return roc_from_scores(*spoof_scores(real_emb, real_labels, spoof_emb, spoof_labels))

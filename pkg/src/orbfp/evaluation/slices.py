"""Metadata-sliced verification reports.

Pairs are formed inside consecutive evaluation batches (as for the global
ROC), then assigned to slices by the metadata of their two records:

* ``snr``: nested slices ``min(snr_i, snr_j) >= t`` for each threshold ``t``;
* ``sdr``: the unordered pair of (site, sdr) combinations of the two records;
* ``time``: the gap in whole days between the two timestamps, bucketed.

Every row reports AUC and EER inside the slice plus accuracy at a supplied
global threshold. A slice without positive or negative pairs keeps its row
with NaN metrics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ParameterError
from .metrics import EVAL_BATCH, accuracy_at, batched_pair_scores, eer, roc_from_scores

SNR_THRESHOLDS = tuple(range(0, 20, 2))
DAY_NS = 86_400 * 10**9
DAY_BUCKETS = ((0, 0), (1, 1), (2, 7), (8, 30), (31, None))
CSV_COLUMNS = ("slice_key", "n_pairs_pos", "n_pairs_neg", "auc", "accuracy_at_global_eer", "eer")


@dataclass(frozen=True)
class SliceRow:
    slice_key: str
    n_pairs_pos: int
    n_pairs_neg: int
    auc: float
    accuracy_at_global_eer: float
    eer: float

    @property
    def flagged(self) -> bool:
        return math.isnan(self.auc)


@dataclass(frozen=True)
class PairMeta:
    """Per-record metadata needed for slicing."""

    labels: np.ndarray
    snr_db: np.ndarray
    site_id: np.ndarray
    sdr_id: np.ndarray
    timestamp_ns: np.ndarray

    @classmethod
    def from_records(cls, records) -> "PairMeta":
        return cls(
            np.array([r.sat_id for r in records]),
            np.array([r.snr_db for r in records], dtype=np.float64),
            np.array([r.site_id for r in records]),
            np.array([r.sdr_id for r in records]),
            np.array([r.timestamp_ns for r in records], dtype=np.int64),
        )


def _row(key: str, d: np.ndarray, same: np.ndarray, threshold: float) -> SliceRow:
    pos, neg = d[same], d[~same]
    acc = accuracy_at(pos, neg, threshold)
    if pos.size == 0 or neg.size == 0:
        return SliceRow(key, int(pos.size), int(neg.size), float("nan"), acc, float("nan"))
    curve = roc_from_scores(pos, neg)
    return SliceRow(key, int(pos.size), int(neg.size), curve.auc, acc, eer(curve)[1])


def slice_rows(keys: np.ndarray, order: Sequence[str], d, same, threshold) -> list[SliceRow]:
    """One row per key in ``order`` over pairs labelled with ``keys``."""
    return [_row(k, d[keys == k], same[keys == k], threshold) for k in order]


def day_bucket_label(lo: int, hi: int | None) -> str:
    if hi is None:
        return f"days_{lo}+"
    return f"days_{lo}" if lo == hi else f"days_{lo}-{hi}"


def slice_report(
    embeddings: np.ndarray,
    meta: PairMeta,
    slicing: str,
    threshold: float,
    batch: int = EVAL_BATCH,
    snr_thresholds: Sequence[float] = SNR_THRESHOLDS,
) -> list[SliceRow]:
    if slicing not in ("snr", "sdr", "time"):
        raise ParameterError(f"unknown slicing {slicing!r}; expected snr, sdr or time")
    d, same, i, j = batched_pair_scores(embeddings, meta.labels, batch)
    if slicing == "snr":
        pair_snr = np.minimum(meta.snr_db[i], meta.snr_db[j])
        return [_row(f"snr>={t:g}", d[pair_snr >= t], same[pair_snr >= t], threshold) for t in snr_thresholds]
    if slicing == "sdr":
        combo = np.char.add(np.char.add("site", meta.site_id.astype(str)), np.char.add("_sdr", meta.sdr_id.astype(str)))
        a, b = combo[i], combo[j]
        keys = np.where(a <= b, np.char.add(np.char.add(a, "|"), b), np.char.add(np.char.add(b, "|"), a))
        names = np.unique(combo)
        order = [f"{x}|{y}" for n, x in enumerate(names) for y in names[n:]]
        return slice_rows(keys, order, d, same, threshold)
    gap = np.abs(meta.timestamp_ns[i] // DAY_NS - meta.timestamp_ns[j] // DAY_NS)
    keys = np.empty(gap.size, dtype=object)
    order = []
    for lo, hi in DAY_BUCKETS:
        label = day_bucket_label(lo, hi)
        order.append(label)
        keys[(gap >= lo) & ((gap <= hi) if hi is not None else True)] = label
    return slice_rows(keys, order, d, same, threshold)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_csv(rows: Sequence, path, columns: Sequence[str] = CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in columns])

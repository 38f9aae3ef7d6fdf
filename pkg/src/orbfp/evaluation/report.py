"""Full evaluation report: CSV tables, SVG and PNG figures and a manifest."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import PacketRecord
from ..errors import ParameterError
from ..nn.model import EmbeddingModel
from . import plots
from .metrics import (
    EVAL_BATCH,
    RocCurve,
    anchored_roc,
    batched_pairwise_roc,
    eer,
    spoof_roc_from_embeddings,
)
from .slices import PairMeta, slice_report, write_csv
from .svg import MAX_POINTS, _decimate, render_roc_svg

ANCHOR_KS = (1, 3, 5)


def records_to_batch(records: Sequence[PacketRecord]) -> np.ndarray:
    return np.stack([r.samples for r in records]).astype(np.float32)


def spoof_roc(real_records, spoofed_records, model: EmbeddingModel) -> RocCurve:
    """Real-real pairs against real-spoof pairs, per satellite present in both sets."""
    if not real_records or not spoofed_records:
        raise ParameterError("spoof ROC needs real and spoofed records")
    real = model.embed(records_to_batch(real_records))
    fake = model.embed(records_to_batch(spoofed_records))
    return spoof_roc_from_embeddings(
        real, [r.sat_id for r in real_records], fake, [r.sat_id for r in spoofed_records]
    )


def write_roc_csv(curve: RocCurve, path, max_points: int = MAX_POINTS) -> None:
    idx = np.arange(curve.fpr.size)
    if idx.size > max_points:
        idx = np.unique(np.round(np.linspace(0, idx.size - 1, max_points)).astype(int))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for i in idx:
            w.writerow([f"{curve.thresholds[i]:.6f}", f"{curve.fpr[i]:.6f}", f"{curve.tpr[i]:.6f}"])


@dataclass(frozen=True)
class SummaryRow:
    name: str
    n_pairs_pos: int
    n_pairs_neg: int
    auc: float
    eer: float
    eer_threshold: float


def _summary(name: str, curve: RocCurve) -> SummaryRow:
    t, e = eer(curve)
    return SummaryRow(name, curve.n_pos, curve.n_neg, curve.auc, e, t)


def run_report(
    records: Sequence[PacketRecord],
    model: EmbeddingModel,
    out_dir,
    seed: int = 0,
    snapshot: dict | None = None,
    batch: int = EVAL_BATCH,
    figures: bool = True,
) -> dict:
    """Evaluate ``model`` on ``records`` and write every report file to ``out_dir``.

    Returns the summary written to ``manifest.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    real = [r for r in records if not r.spoofed]
    fake = [r for r in records if r.spoofed]
    if len({r.sat_id for r in real}) < 2:
        raise ParameterError("evaluation needs real records of at least two transmitters")
    emb = model.embed(records_to_batch(real))
    labels = np.array([r.sat_id for r in real])
    meta_info = {"seed": seed, "config": snapshot or {}}

    curve = batched_pairwise_roc(emb, labels, batch)
    threshold, _ = eer(curve)
    write_roc_csv(curve, out / "roc.csv")
    render_roc_svg(curve, out / "roc.svg", "Pairwise verification", meta_info)
    summaries = [_summary("pairwise", curve)]

    anchored = {}
    for k in ANCHOR_KS:
        anchored[k] = anchored_roc(emb, labels, k, seed=seed)
        summaries.append(_summary(f"anchored_k{k}", anchored[k]))
    write_csv(
        [s for s in summaries if s.name.startswith("anchored")],
        out / "anchored.csv",
        ("name", "n_pairs_pos", "n_pairs_neg", "auc", "eer", "eer_threshold"),
    )

    pm = PairMeta.from_records(real)
    slices = {}
    for kind in ("snr", "sdr", "time"):
        slices[kind] = slice_report(emb, pm, kind, threshold, batch)
        write_csv(slices[kind], out / f"slices_{kind}.csv")

    if fake:
        sc = spoof_roc_from_embeddings(emb, labels, model.embed(records_to_batch(fake)), [r.sat_id for r in fake])
        summaries.append(_summary("spoof", sc))
        write_csv([summaries[-1]], out / "spoof.csv", ("name", "n_pairs_pos", "n_pairs_neg", "auc", "eer", "eer_threshold"))
        render_roc_svg(sc, out / "spoof_roc.svg", "Real vs replayed", meta_info)

    if figures:
        curves = {"pairwise": curve, **{f"{k} anchor(s)": c for k, c in anchored.items()}}
        if fake:
            curves["spoof"] = sc
        plots.plot_rocs(curves, out / "roc.png", "Verification ROC")
        rows = slices["snr"]
        plots.plot_slice_auc([r.slice_key for r in rows], [r.auc for r in rows], out / "slices_snr.png", "AUC by minimum SNR", "pair minimum SNR")

    manifest = {
        **meta_info,
        "n_real": len(real),
        "n_spoofed": len(fake),
        "summary": {s.name: {"auc": s.auc, "eer": s.eer, "eer_threshold": s.eer_threshold} for s in summaries},
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest

"""Matplotlib figures for evaluation reports (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import RocCurve, eer  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_rocs(curves: dict[str, RocCurve], path, title: str = "ROC") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, c in curves.items():
        ax.plot(c.fpr, c.tpr, label=f"{name} (AUC {c.auc:.3f}, EER {eer(c)[1]:.3f})")
    ax.plot([0, 1], [0, 1], color="0.6", linestyle="--", linewidth=1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_slice_auc(labels: Sequence[str], aucs: Sequence[float], path, title: str, xlabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(labels)), aucs, marker="o")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("AUC")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)

"""Dependency-free, byte-deterministic ROC figure."""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import RocCurve, eer

WIDTH, HEIGHT = 480, 480
LEFT, TOP, PLOT = 60, 30, 380
MAX_POINTS = 2000


def _decimate(curve: RocCurve, max_points: int) -> tuple[np.ndarray, np.ndarray]:
    n = curve.fpr.size
    if n <= max_points:
        return curve.fpr, curve.tpr
    idx = np.unique(np.round(np.linspace(0, n - 1, max_points)).astype(int))
    return curve.fpr[idx], curve.tpr[idx]


def _xy(fpr: float, tpr: float) -> tuple[float, float]:
    return LEFT + fpr * PLOT, TOP + (1.0 - tpr) * PLOT


def roc_svg(curve: RocCurve, title: str = "ROC", metadata: dict | None = None, max_points: int = MAX_POINTS) -> str:
    """SVG text for ``curve`` with axes, the EER point and the AUC in the legend."""
    fpr, tpr = _decimate(curve, max_points)
    points = " ".join("{:.2f},{:.2f}".format(*_xy(f, t)) for f, t in zip(fpr, tpr))
    _, e = eer(curve)
    ex, ey = _xy(e, 1.0 - e)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
    ]
    if metadata:
        lines.append(f"<metadata>{escape(json.dumps(metadata, sort_keys=True))}</metadata>")
    lines += [
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP + PLOT}" x2="{LEFT + PLOT}" y2="{TOP}" stroke="#999999" stroke-dasharray="4 4"/>',
    ]
    for k in range(6):
        v = k / 5
        x, _ = _xy(v, 0)
        _, y = _xy(0, v)
        lines.append(
            f'<text x="{x:.2f}" y="{TOP + PLOT + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.1f}</text>'
        )
        lines.append(
            f'<text x="{LEFT - 6}" y="{y + 3:.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.1f}</text>'
        )
    lines += [
        f'<text x="{LEFT + PLOT / 2:.0f}" y="{TOP + PLOT + 36}" text-anchor="middle" font-family="sans-serif" font-size="12">False positive rate</text>',
        f'<text x="16" y="{TOP + PLOT / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {TOP + PLOT / 2:.0f})">True positive rate</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{points}"/>',
        f'<circle cx="{ex:.2f}" cy="{ey:.2f}" r="4" fill="#d62728"/>',
        f'<text x="{LEFT + PLOT - 8}" y="{TOP + PLOT - 28}" text-anchor="end" font-family="sans-serif" font-size="12">AUC = {curve.auc:.3f}</text>',
        f'<text x="{LEFT + PLOT - 8}" y="{TOP + PLOT - 12}" text-anchor="end" font-family="sans-serif" font-size="12" fill="#d62728">EER = {e:.3f}</text>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def render_roc_svg(curve: RocCurve, path, title: str = "ROC", metadata: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(roc_svg(curve, title, metadata), encoding="utf-8")
    return path

"""Training-history charts as plain SVG text."""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

from .train import TrainingHistory, read_history

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 50}
COLORS = {"train": "#1f77b4", "val": "#d62728"}


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def line_chart(x: list[float], series: dict[str, list[float]], title: str, ylabel: str,
               xlabel: str = "epoch") -> str:
    """One SVG document with a polyline (or single markers) per series."""
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    x0, x1 = min(x), max(x)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    ys = [v for vals in series.values() for v in vals if math.isfinite(v)]
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(min(x), max(x)):
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{MARGIN["top"] + ph}" x2="{px:.2f}" y2="{MARGIN["top"] + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        py = sy(t)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{py:.2f}" x2="{MARGIN["left"]}" y2="{py:.2f}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{py + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, vals) in enumerate(series.items()):
        color = COLORS.get(name, "#333333")
        pts = [(sx(a), sy(b)) for a, b in zip(x, vals) if math.isfinite(b)]
        if len(pts) > 1:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        else:
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>' for a, b in pts]
        ly = MARGIN["top"] + 16 + 16 * i
        lx = MARGIN["left"] + pw - 90
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def history_charts(hist: TrainingHistory) -> dict[str, str]:
    x = hist.column("epoch")
    return {
        "loss": line_chart(x, {"train": hist.column("train_loss"), "val": hist.column("val_loss")},
                           "Weighted Tanimoto loss", "loss"),
        "metric": line_chart(x, {"train": hist.column("train_metric"), "val": hist.column("val_metric")},
                             "Tanimoto coefficient", "coefficient"),
    }


def plot_history(history_file, out_dir: str | None = None) -> list[str]:
    """Write ``loss.svg`` and ``metric.svg`` next to the history (or into ``out_dir``)."""
    hist = read_history(history_file)
    out_dir = out_dir or os.path.dirname(os.path.abspath(history_file))
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, svg in history_charts(hist).items():
        p = os.path.join(out_dir, f"{name}.svg")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(svg)
        paths.append(p)
    return paths

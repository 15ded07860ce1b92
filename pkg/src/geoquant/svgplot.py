"""Deterministic SVG line plots of CSV series, with no plotting dependency."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

WIDTH, HEIGHT = 800, 600
MARGIN = (80, 40, 40, 70)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


class PlotError(ValueError):
    pass


def read_series(text: str, x: str, ys: list[str]) -> tuple[list[float], list[list[float]]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise PlotError("empty series")
    try:
        xs = [float(r[x]) for r in rows]
        cols = [[float(r[y]) for r in rows] for y in ys]
    except KeyError as exc:
        raise PlotError(f"missing column {exc}") from None
    except (TypeError, ValueError) as exc:
        raise PlotError(f"non-numeric entry: {exc}") from None
    return xs, cols


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [10.0**e for e in range(math.floor(lo), math.ceil(hi) + 1) if lo - 1e-9 <= e <= hi + 1e-9]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span)) if span > 0 else 1.0
    if span / step < 3:
        step /= 2
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def render(xs, cols, labels, title="", xlabel="", ylabel="", loglog=False) -> str:
    """SVG text for one or more y-series over shared x values."""
    if not xs:
        raise PlotError("empty series")
    tr = (lambda v: math.log10(v)) if loglog else (lambda v: v)
    pts = []
    for c in cols:
        if len(c) != len(xs):
            raise PlotError("series length mismatch")
        if loglog and (min(xs) <= 0 or min(c) <= 0):
            raise PlotError("log-log axes need positive data")
        pts.append([(tr(a), tr(b)) for a, b in zip(xs, c)])
    allx = [p[0] for s in pts for p in s]
    ally = [p[1] for s in pts for p in s]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, T, B = MARGIN
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def X(v):
        return L + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return T + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1, loglog):
        tv = tr(v) if loglog else v
        out.append(f'<line x1="{_fmt(X(tv))}" y1="{T + ph}" x2="{_fmt(X(tv))}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(X(tv))}" y="{T + ph + 20}" font-size="12" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1, loglog):
        tv = tr(v) if loglog else v
        out.append(f'<line x1="{L - 5}" y1="{_fmt(Y(tv))}" x2="{L}" y2="{_fmt(Y(tv))}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{_fmt(Y(tv) + 4)}" font-size="12" text-anchor="end">{v:g}</text>')
    for i, (s, lab) in enumerate(zip(pts, labels)):
        col = COLORS[i % len(COLORS)]
        path = " ".join(f"{_fmt(X(a))},{_fmt(Y(b))}" for a, b in s)
        out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
        for a, b in s:
            out.append(f'<circle cx="{_fmt(X(a))}" cy="{_fmt(Y(b))}" r="3" fill="{col}"/>')
        out.append(f'<text x="{L + 10}" y="{T + 18 + 16 * i}" font-size="13" fill="{col}">{_esc(lab)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:g}" y="24" font-size="16" text-anchor="middle">{_esc(title)}</text>')
    if xlabel:
        out.append(f'<text x="{L + pw / 2:g}" y="{HEIGHT - 20}" font-size="13" text-anchor="middle">{_esc(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="20" y="{T + ph / 2:g}" font-size="13" text-anchor="middle" transform="rotate(-90 20 {T + ph / 2:g})">{_esc(ylabel)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot_series(csv_source: str | Path, x: str, ys: list[str], loglog: bool = False, title: str = "") -> str:
    """Render columns ``ys`` against ``x`` from a CSV file path or CSV text."""
    text = Path(csv_source).read_text() if isinstance(csv_source, Path) else csv_source
    xs, cols = read_series(text, x, ys)
    return render(xs, cols, ys, title=title, xlabel=x, ylabel=", ".join(ys), loglog=loglog)

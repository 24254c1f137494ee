"""Static SVG line and bar charts written straight from numbers, no plotting runtime."""

from __future__ import annotations

import math
from html import escape
from pathlib import Path

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 55


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xr: tuple, yr: tuple):
        self.xr, self.yr = xr, yr
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            f'font-family="sans-serif" font-size="12">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{LEFT + (W - LEFT - RIGHT) / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="16" y="{TOP + (H - TOP - BOTTOM) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {TOP + (H - TOP - BOTTOM) / 2:.1f})">{escape(ylabel)}</text>',
        ]
        self._axes()

    def x(self, v: float) -> float:
        lo, hi = self.xr
        return LEFT + (W - LEFT - RIGHT) * (0.5 if hi == lo else (v - lo) / (hi - lo))

    def y(self, v: float) -> float:
        lo, hi = self.yr
        return H - BOTTOM - (H - TOP - BOTTOM) * (0.5 if hi == lo else (v - lo) / (hi - lo))

    def _axes(self) -> None:
        x0, x1, y0, y1 = LEFT, W - RIGHT, H - BOTTOM, TOP
        self.parts.append(f'<path d="M{x0},{y1} V{y0} H{x1}" fill="none" stroke="black"/>')
        for t in _ticks(*self.yr):
            yy = self.y(t)
            self.parts.append(f'<line x1="{x0 - 4}" y1="{yy:.1f}" x2="{x1}" y2="{yy:.1f}" stroke="#ddd"/>')
            self.parts.append(f'<text x="{x0 - 7}" y="{yy + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')

    def xticks(self, values, labels=None) -> None:
        labels = labels or [_fmt(v) for v in values]
        for v, lab in zip(values, labels):
            xx = self.x(v)
            self.parts.append(f'<line x1="{xx:.1f}" y1="{H - BOTTOM}" x2="{xx:.1f}" y2="{H - BOTTOM + 4}" stroke="black"/>')
            self.parts.append(f'<text x="{xx:.1f}" y="{H - BOTTOM + 18}" text-anchor="middle">{escape(str(lab))}</text>')

    def legend(self, names) -> None:
        for i, name in enumerate(names):
            yy = TOP + 10 + 18 * i
            c = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<rect x="{W - RIGHT + 12}" y="{yy - 9}" width="12" height="12" fill="{c}"/>')
            self.parts.append(f'<text x="{W - RIGHT + 30}" y="{yy + 1}">{escape(str(name))}</text>')

    def save(self, path) -> Path:
        self.parts.append("</svg>")
        path = Path(path)
        path.write_text("\n".join(self.parts) + "\n", encoding="utf-8")
        return path


def _range(values, pad: float = 0.05, floor=None) -> tuple:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return (0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if floor is not None:
        lo = min(lo, floor)
    span = hi - lo or max(abs(hi), 1.0)
    return (lo - pad * span, hi + pad * span)


def line_plot(path, series: dict, title: str, xlabel: str, ylabel: str) -> Path:
    """``series`` maps a legend name to a list of ``(x, y)`` points."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    cv = _Canvas(title, xlabel, ylabel, _range(xs, 0.02), _range(ys))
    cv.xticks(sorted(set(xs)) if len(set(xs)) <= 12 else _ticks(min(xs), max(xs)))
    for i, (name, pts) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        pts = [(x, y) for x, y in pts if y is not None and math.isfinite(y)]
        if len(pts) > 1:
            d = " ".join(f"{'M' if j == 0 else 'L'}{cv.x(x):.1f},{cv.y(y):.1f}" for j, (x, y) in enumerate(pts))
            cv.parts.append(f'<path d="{d}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in pts:
            cv.parts.append(f'<circle cx="{cv.x(x):.1f}" cy="{cv.y(y):.1f}" r="3.5" fill="{c}"/>')
    cv.legend(series.keys())
    return cv.save(path)


def bar_plot(path, categories: list, groups: dict, title: str, xlabel: str, ylabel: str) -> Path:
    """Grouped bars: ``groups`` maps a legend name to one value per category."""
    ys = [v for vals in groups.values() for v in vals] + [0.0]
    n_cat, n_grp = len(categories), max(len(groups), 1)
    cv = _Canvas(title, xlabel, ylabel, (-0.5, n_cat - 0.5), _range(ys, floor=0.0))
    cv.xticks(list(range(n_cat)), [str(c) for c in categories])
    slot = (W - LEFT - RIGHT) / max(n_cat, 1) * 0.8
    bw = slot / n_grp
    base = cv.y(0.0)
    for g, (name, vals) in enumerate(groups.items()):
        c = PALETTE[g % len(PALETTE)]
        for i, v in enumerate(vals):
            if v is None or not math.isfinite(v):
                continue
            x0 = cv.x(i) - slot / 2 + g * bw
            top = cv.y(v)
            cv.parts.append(f'<rect x="{x0:.1f}" y="{min(top, base):.1f}" width="{bw * 0.92:.1f}" '
                            f'height="{abs(base - top):.1f}" fill="{c}"/>')
    cv.legend(groups.keys())
    return cv.save(path)


def histogram(path, samples: dict, bins: int, lo: float, hi: float, title: str, xlabel: str) -> Path:
    """Overlaid step histograms (normalised counts) for each named sample list."""
    edges = [lo + (hi - lo) * i / bins for i in range(bins + 1)]
    dens = {}
    for name, vals in samples.items():
        counts = [0] * bins
        for v in vals:
            j = min(max(int((v - lo) / (hi - lo) * bins), 0), bins - 1) if hi > lo else 0
            counts[j] += 1
        total = max(len(vals), 1)
        dens[name] = [c / total for c in counts]
    peak = max((max(v) for v in dens.values() if v), default=1.0)
    cv = _Canvas(title, xlabel, "fraction of samples", (lo, hi), (0.0, peak * 1.05 or 1.0))
    cv.xticks(_ticks(lo, hi))
    for i, (name, d) in enumerate(dens.items()):
        c = PALETTE[i % len(PALETTE)]
        path_d = f"M{cv.x(edges[0]):.1f},{cv.y(0):.1f}"
        for j, v in enumerate(d):
            path_d += f" L{cv.x(edges[j]):.1f},{cv.y(v):.1f} L{cv.x(edges[j + 1]):.1f},{cv.y(v):.1f}"
        path_d += f" L{cv.x(edges[-1]):.1f},{cv.y(0):.1f}"
        cv.parts.append(f'<path d="{path_d}" fill="{c}" fill-opacity="0.25" stroke="{c}" stroke-width="1.5"/>')
    cv.legend(dens.keys())
    return cv.save(path)

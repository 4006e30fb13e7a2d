"""Deterministic SVG rendering of plot data (Manhattan, effect size, envelopes).

Coordinates are printed with a fixed number of decimals and elements are
emitted in data order, so identical input gives byte-identical files.
"""

from __future__ import annotations

import math
from html import escape
from typing import Optional, Sequence

COLORS = {"object": "#1f77b4", "spatial": "#d62728"}
BAND = "#c8c8c8"
SAMPLE = "#1f77b4"
THEORY = "#d62728"
FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


class Canvas:
    def __init__(self, width: int, height: int, title: str = ""):
        self.width = width
        self.height = height
        self.parts = []
        if title:
            self.parts.append(f"<title>{escape(title)}</title>")

    def add(self, s: str) -> None:
        self.parts.append(s)

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash: Optional[str] = None, cls: str = "") -> None:
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        extra += f' class="{cls}"' if cls else ""
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{stroke}" stroke-width="{width:g}"{extra}/>')

    def circle(self, x, y, r, fill, cls: str = "", title: str = "") -> None:
        c = f' class="{cls}"' if cls else ""
        if title:
            self.add(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{r:g}" fill="{fill}"{c}>'
                     f"<title>{escape(title)}</title></circle>")
        else:
            self.add(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{r:g}" fill="{fill}"{c}/>')

    def text(self, x, y, s, size=11, anchor="start", rotate: Optional[float] = None, cls: str = "") -> None:
        rot = f' transform="rotate({rotate:g} {_f(x)} {_f(y)})"' if rotate is not None else ""
        c = f' class="{cls}"' if cls else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                 f'{FONT}{rot}{c}>{escape(str(s))}</text>')

    def polyline(self, xs, ys, stroke, width=1.0, dash: Optional[str] = None, opacity: float = 1.0,
                 cls: str = "") -> None:
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys) if math.isfinite(y))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        extra += f' stroke-opacity="{opacity:g}"' if opacity != 1.0 else ""
        extra += f' class="{cls}"' if cls else ""
        self.add(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width:g}"{extra}/>')

    def polygon(self, xs, ys, fill, cls: str = "") -> None:
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys))
        c = f' class="{cls}"' if cls else ""
        self.add(f'<polygon points="{pts}" fill="{fill}" stroke="none"{c}/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        bg = f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>'
        return "\n".join([head, bg, *self.parts, "</svg>"]) + "\n"


def nice_ticks(lo: float, hi: float, n: int = 5) -> list:
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while start + k * step <= hi + 1e-9 * step:
        ticks.append(round(start + k * step, 10))
        k += 1
    return ticks


def _tick_label(v: float) -> str:
    return f"{v:g}"


class Axes:
    """Linear data->pixel mapping for one panel."""

    def __init__(self, canvas: Canvas, left, top, width, height, xlim, ylim):
        self.c = canvas
        self.left, self.top, self.width, self.height = left, top, width, height
        self.xlim, self.ylim = xlim, ylim

    def x(self, v):
        lo, hi = self.xlim
        return self.left + (v - lo) / (hi - lo) * self.width

    def y(self, v):
        lo, hi = self.ylim
        return self.top + self.height - (v - lo) / (hi - lo) * self.height

    def frame(self, xlabel="", ylabel="", xticks=True, yticks=True):
        c = self.c
        b = self.top + self.height
        c.line(self.left, b, self.left + self.width, b)
        c.line(self.left, self.top, self.left, b)
        if xticks:
            for t in nice_ticks(*self.xlim):
                c.line(self.x(t), b, self.x(t), b + 4)
                c.text(self.x(t), b + 16, _tick_label(t), size=10, anchor="middle")
        if yticks:
            for t in nice_ticks(*self.ylim):
                c.line(self.left - 4, self.y(t), self.left, self.y(t))
                c.text(self.left - 7, self.y(t) + 3.5, _tick_label(t), size=10, anchor="end")
        if xlabel:
            c.text(self.left + self.width / 2, b + 34, xlabel, size=12, anchor="middle")
        if ylabel:
            x0 = self.left - 42
            y0 = self.top + self.height / 2
            c.text(x0, y0, ylabel, size=12, anchor="middle", rotate=-90)


def _padded(lo, hi, frac=0.05):
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = (hi - lo) * frac
    return lo - pad, hi + pad


def render_manhattan(data: dict) -> str:
    points = data["points"]
    thr = data["threshold"]
    n = len(points)
    width = max(480, 120 + 18 * n)
    height = 460
    c = Canvas(width, height, "Manhattan plot")
    top = max([p["neg_log10_p"] for p in points] + [thr["neg_log10_p"]])
    ax = Axes(c, 70, 30, width - 100, 250, (0.5, n + 0.5), (0.0, top * 1.08 if top > 0 else 1.0))
    ax.frame(ylabel="-log10(p)", xticks=False)
    y_thr = ax.y(thr["neg_log10_p"])
    c.line(ax.left, y_thr, ax.left + ax.width, y_thr, stroke="#555555", dash="6,4", cls="threshold")
    base = ax.top + ax.height
    for p in points:
        x = ax.x(p["x"])
        c.circle(x, ax.y(p["neg_log10_p"]), 4.5, COLORS.get(p["class"], "#7f7f7f"), cls="point",
                 title=f'{p["feature"]} p={p["p"]:.3g}')
        c.text(x, base + 10, p["feature"], size=9, anchor="end", rotate=-60)
    c.text(ax.left + ax.width, 18, f'threshold p = {thr["p"]:.3g} ({thr["method"]})', size=10, anchor="end")
    _legend(c, ax.left + 8, 18)
    return c.render()


def _legend(c: Canvas, x, y):
    for k, (label, cls) in enumerate((("Object-level", "object"), ("Spatial", "spatial"))):
        xx = x + 110 * k
        c.circle(xx, y - 4, 4.5, COLORS[cls], cls="legend")
        c.text(xx + 8, y, label, size=10)


def render_effect_size(data: dict) -> str:
    rows = data["features"]
    width = 640
    if not rows:
        c = Canvas(width, 120, "Effect size plot")
        c.text(width / 2, 60, "No features passed the significance threshold", size=13, anchor="middle",
               cls="notice")
        return c.render()
    row_h = 22
    height = 90 + row_h * len(rows)
    c = Canvas(width, height, "Effect size plot")
    lo = min(min(r["ci_low"] for r in rows), 0.0)
    hi = max(max(r["ci_high"] for r in rows), 0.0)
    ax = Axes(c, 220, 20, width - 250, row_h * len(rows), _padded(lo, hi), (0.0, float(len(rows))))
    ax.frame(xlabel="beta (per SD) with 95% CI", yticks=False)
    c.line(ax.x(0.0), ax.top, ax.x(0.0), ax.top + ax.height, stroke="#555555", dash="4,3", cls="zero")
    for k, r in enumerate(rows):
        yc = ax.y(len(rows) - k - 0.5)
        color = COLORS.get(r["class"], "#7f7f7f")
        c.line(ax.x(r["ci_low"]), yc, ax.x(r["ci_high"]), yc, stroke=color, width=2, cls="ci")
        c.circle(ax.x(r["beta"]), yc, 4, color, cls="beta", title=f'{r["feature"]} beta={r["beta"]:.3g}')
        c.text(ax.left - 8, yc + 4, r["feature"], size=10, anchor="end")
    return c.render()


def render_envelope(data: dict, max_samples: Optional[int] = None) -> str:
    """Side-by-side panels: sample curves, envelope band and dashed theoretical curve."""
    radii = [float(r) for r in data["radii"]]
    panels = data["panels"]
    pw, ph = 260, 220
    width = 60 + len(panels) * (pw + 60)
    height = ph + 100
    c = Canvas(width, height, "Simulation envelopes")
    for k, panel in enumerate(panels):
        left = 60 + k * (pw + 60)
        samples: Sequence = panel["samples"]
        if max_samples is not None:
            samples = samples[:max_samples]
        vals = [v for v in panel["lower"] + panel["upper"] + panel["theoretical"] if v is not None]
        for s in samples:
            vals.extend(v for v in s if v is not None)
        ax = Axes(c, left, 40, pw, ph, (0.0, radii[-1]), _padded(min(vals), max(vals)))
        xs = [ax.x(r) for r in radii]
        band_x = xs + xs[::-1]
        band_y = [ax.y(v) for v in panel["lower"]] + [ax.y(v) for v in panel["upper"][::-1]]
        c.polygon(band_x, band_y, BAND, cls="envelope")
        for s in samples:
            c.polyline(xs, [ax.y(v) if v is not None else math.nan for v in s], SAMPLE, width=0.6,
                       opacity=0.25, cls="sample")
        c.polyline(xs, [ax.y(v) for v in panel["theoretical"]], THEORY, width=1.5, dash="6,4",
                   cls="theoretical")
        ax.frame(xlabel="r (µm)")
        name = {"L": "L-function", "g": "g-function", "G": "G-function", "F": "F-function"}.get(
            panel["function"], panel["function"])
        c.text(left + pw / 2, 28, f'{name} (coverage {panel["coverage"]:.3f})', size=12, anchor="middle")
    return c.render()


RENDERERS = {"manhattan": render_manhattan, "effect_size": render_effect_size, "envelope": render_envelope}


def render(data: dict) -> str:
    try:
        fn = RENDERERS[data["kind"]]
    except KeyError:
        raise ValueError(f"unknown plot kind {data.get('kind')!r}") from None
    return fn(data)

"""Tiny deterministic SVG writer.

Output bytes depend only on the inputs: coordinates are printed with fixed
precision and elements are emitted in call order.
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr


def num(x: float) -> str:
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class Svg:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def _attrs(self, **attrs) -> str:
        out = []
        for k, v in attrs.items():
            if v is None:
                continue
            name = k.rstrip("_").replace("_", "-")
            out.append(f"{name}={quoteattr(num(v) if isinstance(v, float) else str(v))}")
        return " ".join(out)

    def rect(self, x, y, w, h, **attrs) -> None:
        self.parts.append(f"<rect {self._attrs(x=float(x), y=float(y), width=float(w), height=float(h), **attrs)}/>")

    def line(self, x1, y1, x2, y2, stroke="#000", **attrs) -> None:
        self.parts.append(f"<line {self._attrs(x1=float(x1), y1=float(y1), x2=float(x2), y2=float(y2), stroke=stroke, **attrs)}/>")

    def circle(self, cx, cy, r, **attrs) -> None:
        self.parts.append(f"<circle {self._attrs(cx=float(cx), cy=float(cy), r=float(r), **attrs)}/>")

    def polyline(self, points: Sequence[tuple[float, float]], **attrs) -> None:
        pts = " ".join(f"{num(x)},{num(y)}" for x, y in points)
        self.parts.append(f"<polyline {self._attrs(points=pts, fill='none', **attrs)}/>")

    def text(self, x, y, content: str, **attrs) -> None:
        self.parts.append(f"<text {self._attrs(x=float(x), y=float(y), **attrs)}>{escape(content)}</text>")

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="12">')
        return "\n".join([head, *self.parts, "</svg>"]) + "\n"


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def line_chart(xs: Sequence[float], ys: Sequence[float], xlabel: str, ylabel: str, title: str = "",
               width: int = 560, height: int = 380) -> str:
    """Line chart with circular markers at each data point."""
    if len(xs) != len(ys) or not xs:
        raise ValueError("need equally long, non-empty x and y series")
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return top + ph - (y - y_lo) / (y_hi - y_lo) * ph

    svg = Svg(width, height)
    svg.rect(0, 0, width, height, fill="#fff")
    if title:
        svg.text(width / 2, 22, title, text_anchor="middle", font_size=14)
    svg.line(left, top + ph, left + pw, top + ph)
    svg.line(left, top, left, top + ph)
    for t in nice_ticks(x_lo, x_hi):
        svg.line(sx(t), top + ph, sx(t), top + ph + 5)
        svg.text(sx(t), top + ph + 18, num(t), text_anchor="middle")
    for t in nice_ticks(y_lo, y_hi):
        svg.line(left - 5, sy(t), left, sy(t))
        svg.text(left - 8, sy(t) + 4, num(t), text_anchor="end")
    svg.text(left + pw / 2, height - 10, xlabel, text_anchor="middle")
    svg.text(18, top + ph / 2, ylabel, text_anchor="middle",
             transform=f"rotate(-90 18 {num(top + ph / 2)})")
    pts = [(sx(x), sy(y)) for x, y in zip(xs, ys)]
    if len(pts) > 1:
        svg.polyline(pts, stroke="#1f5fa8", stroke_width=2)
    for x, y in pts:
        svg.circle(x, y, 4, fill="#1f5fa8", class_="marker")
    return svg.render()

"""Minimal deterministic SVG plotting: scatter with fit line, box plots.

Output is a pure function of the inputs (fixed canvas, fixed float
formatting), so rendered files are byte-stable and diffable in tests.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 20, 36, 52
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return "%.6g" % float(x)


def _limits(values, pad_fraction: float = 0.08) -> tuple[float, float]:
    lo = float(min(values))
    hi = float(max(values))
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = (hi - lo) * pad_fraction
    return lo - pad, hi + pad


class Axes:
    """Data-to-pixel mapping plus the shared frame/tick/label boilerplate."""

    def __init__(self, xlim: tuple[float, float], ylim: tuple[float, float],
                 title: str, xlabel: str, ylabel: str, x_ticks: bool = True):
        self.xlim = xlim
        self.ylim = ylim
        self.x_ticks = x_ticks
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{_esc(title)}</text>',
            f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) // 2}" y="{HEIGHT - 12}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12">'
            f'{_esc(xlabel)}</text>',
            f'<text x="16" y="{(MARGIN_T + HEIGHT - MARGIN_B) // 2}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 16 {(MARGIN_T + HEIGHT - MARGIN_B) // 2})">'
            f'{_esc(ylabel)}</text>',
        ]
        self._frame_and_ticks()

    def px(self, x: float) -> float:
        lo, hi = self.xlim
        return MARGIN_L + (x - lo) / (hi - lo) * (WIDTH - MARGIN_L - MARGIN_R)

    def py(self, y: float) -> float:
        lo, hi = self.ylim
        return HEIGHT - MARGIN_B - (y - lo) / (hi - lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    def _frame_and_ticks(self):
        x0, x1 = MARGIN_L, WIDTH - MARGIN_R
        y0, y1 = MARGIN_T, HEIGHT - MARGIN_B
        self.parts.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" '
                          f'height="{y1 - y0}" fill="none" stroke="black"/>')
        for i in range(5):
            fx = self.xlim[0] + (self.xlim[1] - self.xlim[0]) * i / 4
            fy = self.ylim[0] + (self.ylim[1] - self.ylim[0]) * i / 4
            px, py = self.px(fx), self.py(fy)
            if self.x_ticks:
                self.parts.append(f'<line x1="{_f(px)}" y1="{y1}" x2="{_f(px)}" '
                                  f'y2="{y1 + 5}" stroke="black"/>')
                self.parts.append(f'<text x="{_f(px)}" y="{y1 + 18}" '
                                  f'text-anchor="middle" font-family="sans-serif" '
                                  f'font-size="11">{_f(fx)}</text>')
            self.parts.append(f'<line x1="{x0 - 5}" y1="{_f(py)}" x2="{x0}" '
                              f'y2="{_f(py)}" stroke="black"/>')
            self.parts.append(f'<text x="{x0 - 8}" y="{_f(py + 4)}" text-anchor="end" '
                              f'font-family="sans-serif" font-size="11">{_f(fy)}</text>')

    def circle(self, x: float, y: float, color: str, r: float = 4.0):
        self.parts.append(f'<circle cx="{_f(self.px(x))}" cy="{_f(self.py(y))}" '
                          f'r="{_f(r)}" fill="{color}" fill-opacity="0.75"/>')

    def segment(self, x0, y0, x1, y1, color: str, width: float = 1.5,
                dash: str | None = None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_f(self.px(x0))}" y1="{_f(self.py(y0))}" '
            f'x2="{_f(self.px(x1))}" y2="{_f(self.py(y1))}" '
            f'stroke="{color}" stroke-width="{_f(width)}"{extra}/>')

    def rect(self, x0, y0, x1, y1, color: str):
        px0, px1 = self.px(x0), self.px(x1)
        py0, py1 = self.py(y1), self.py(y0)  # y flips
        self.parts.append(f'<rect x="{_f(px0)}" y="{_f(py0)}" '
                          f'width="{_f(px1 - px0)}" height="{_f(py1 - py0)}" '
                          f'fill="{color}" fill-opacity="0.35" stroke="{color}"/>')

    def caption(self, text: str):
        self.parts.append(f'<text x="{WIDTH - MARGIN_R - 4}" y="{MARGIN_T + 16}" '
                          f'text-anchor="end" font-family="sans-serif" '
                          f'font-size="12">{_esc(text)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def scatter_plot(xs, ys, title: str, xlabel: str, ylabel: str,
                 fit_line: bool = True, caption: str | None = None) -> str:
    """Scatter of (xs, ys) with an optional least-squares line."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("nothing to plot")
    ax = Axes(_limits(xs), _limits(ys), title, xlabel, ylabel)
    if fit_line and xs.size >= 2 and not np.all(xs == xs[0]):
        xc = xs - xs.mean()
        b = float((xc * (ys - ys.mean())).sum() / (xc * xc).sum())
        a = float(ys.mean() - b * xs.mean())
        ax.segment(ax.xlim[0], a + b * ax.xlim[0], ax.xlim[1], a + b * ax.xlim[1],
                   "#888888", dash="6,4")
    for x, y in zip(xs, ys):
        ax.circle(float(x), float(y), PALETTE[0])
    if caption:
        ax.caption(caption)
    return ax.render()


def box_plot(groups: list[tuple[str, list[float]]], title: str, xlabel: str,
             ylabel: str) -> str:
    """One box per group: quartile box, median line, min/max whiskers."""
    if not groups or all(len(v) == 0 for _, v in groups):
        raise ValueError("nothing to plot")
    pooled = np.concatenate([np.asarray(v, dtype=np.float64)
                             for _, v in groups if len(v)])
    ax = Axes((-0.5, len(groups) - 0.5), _limits(pooled), title, xlabel, ylabel,
              x_ticks=False)
    half = 0.3
    y_axis = HEIGHT - MARGIN_B
    for i, (label, values) in enumerate(groups):
        px = ax.px(i)
        ax.parts.append(f'<text x="{_f(px)}" y="{y_axis + 18}" '
                        f'text-anchor="middle" font-family="sans-serif" '
                        f'font-size="11">{_esc(label)}</text>')
        if len(values) == 0:
            continue
        vals = np.asarray(values, dtype=np.float64)
        q1, med, q3 = (float(np.percentile(vals, q)) for q in (25, 50, 75))
        lo, hi = float(vals.min()), float(vals.max())
        color = PALETTE[i % len(PALETTE)]
        ax.segment(i, lo, i, q1, color)
        ax.segment(i, q3, i, hi, color)
        ax.segment(i - half / 2, lo, i + half / 2, lo, color)
        ax.segment(i - half / 2, hi, i + half / 2, hi, color)
        ax.rect(i - half, q1, i + half, q3, color)
        ax.segment(i - half, med, i + half, med, "black", width=2.0)
    return ax.render()

"""Quick-look SVG plots: heatmaps and line charts, no plotting library."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 90, 40, 50
MAX_CELLS = (160, 100)

# viridis-like stops
_STOPS = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
                  dtype=float)
_LINE_COLOURS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _colour(v: float) -> str:
    if not np.isfinite(v):
        return "#ffffff"
    x = min(max(v, 0.0), 1.0) * (len(_STOPS) - 1)
    k = min(int(x), len(_STOPS) - 2)
    rgb = _STOPS[k] + (x - k) * (_STOPS[k + 1] - _STOPS[k])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _num(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    first = np.ceil(lo / step - 1e-9) * step
    return list(np.arange(first, hi + 1e-9 * step, step))


def _blockreduce(z: np.ndarray, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Max over blocks so the cell count stays bounded; returns (z, row idx, col idx)."""
    ny, nx = z.shape
    ry = max(1, int(np.ceil(ny / shape[1])))
    rx = max(1, int(np.ceil(nx / shape[0])))
    rows = np.arange(0, ny, ry)
    cols = np.arange(0, nx, rx)
    out = np.full((rows.size, cols.size), np.nan)
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            blk = z[i:i + ry, j:j + rx]
            fin = blk[np.isfinite(blk)]
            if fin.size:
                out[a, b] = fin.max()
    return out, rows, cols


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim, invert_y=False,
                 comment: str = ""):
        self.parts = ['<?xml version="1.0" encoding="UTF-8"?>']
        if comment:
            self.parts.append(f"<!-- {escape(comment.replace('--', '- -'))} -->")
        self.parts.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
                          f'height="{HEIGHT}" font-family="sans-serif" font-size="11">')
        self.parts.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
        self.xlim, self.ylim, self.invert_y = xlim, ylim, invert_y
        self.pw = WIDTH - LEFT - RIGHT
        self.ph = HEIGHT - TOP - BOTTOM
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def x(self, v):
        lo, hi = self.xlim
        return LEFT + (v - lo) / ((hi - lo) or 1.0) * self.pw

    def y(self, v):
        lo, hi = self.ylim
        u = (v - lo) / ((hi - lo) or 1.0)
        return TOP + (u if self.invert_y else 1 - u) * self.ph

    def add(self, s: str):
        self.parts.append(s)

    def finish(self) -> str:
        p = self.parts
        p.append(f'<rect x="{LEFT}" y="{TOP}" width="{self.pw}" height="{self.ph}" '
                 f'fill="none" stroke="black"/>')
        for t in _ticks(*self.xlim):
            x = self.x(t)
            p.append(f'<line x1="{x:.2f}" y1="{TOP + self.ph}" x2="{x:.2f}" '
                     f'y2="{TOP + self.ph + 4}" stroke="black"/>')
            p.append(f'<text x="{x:.2f}" y="{TOP + self.ph + 16}" text-anchor="middle">'
                     f'{_num(t)}</text>')
        for t in _ticks(*sorted(self.ylim)):
            y = self.y(t)
            p.append(f'<line x1="{LEFT - 4}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
            p.append(f'<text x="{LEFT - 6}" y="{y + 4:.2f}" text-anchor="end">{_num(t)}</text>')
        p.append(f'<text x="{LEFT + self.pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
                 f'{escape(self.xlabel)}</text>')
        p.append(f'<text x="16" y="{TOP + self.ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {TOP + self.ph / 2:.1f})">{escape(self.ylabel)}</text>')
        p.append(f'<text x="{LEFT + self.pw / 2:.1f}" y="{TOP - 14}" text-anchor="middle" '
                 f'font-size="13">{escape(self.title)}</text>')
        p.append("</svg>")
        return "\n".join(p) + "\n"


def heatmap_svg(x, y, z, title: str = "", xlabel: str = "", ylabel: str = "",
                marker: Optional[Tuple[float, float]] = None, log_scale: bool = False,
                overlays: Sequence[Tuple[np.ndarray, np.ndarray, str]] = (),
                comment: str = "") -> str:
    """Heatmap of ``z[iy, ix]`` on centres ``x``, ``y``; NaN/inf cells are blank."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape != (y.size, x.size):
        raise ValueError("z must have shape (len(y), len(x))")
    zz = np.where(np.isfinite(z), z, np.nan)
    if log_scale:
        with np.errstate(divide="ignore", invalid="ignore"):
            zz = np.log10(np.where(zz > 0, zz, np.nan))
    zr, rows, cols = _blockreduce(zz, MAX_CELLS)
    fin = zr[np.isfinite(zr)]
    lo, hi = (float(fin.min()), float(fin.max())) if fin.size else (0.0, 1.0)

    def edges(c, idx):
        if c.size == 1:
            e = np.array([c[0] - 0.5, c[0] + 0.5])
        else:
            mid = 0.5 * (c[1:] + c[:-1])
            e = np.concatenate([[c[0] - (mid[0] - c[0])], mid, [c[-1] + (c[-1] - mid[-1])]])
        return e[np.append(idx, c.size)]

    xe, ye = edges(x, cols), edges(y, rows)
    cv = _Canvas(title, xlabel, ylabel, (xe[0], xe[-1]), (ye[0], ye[-1]), comment=comment)
    for a in range(zr.shape[0]):
        for b in range(zr.shape[1]):
            v = zr[a, b]
            u = (v - lo) / (hi - lo) if hi > lo else 0.5
            x0, x1 = cv.x(xe[b]), cv.x(xe[b + 1])
            y0, y1 = cv.y(ye[a + 1]), cv.y(ye[a])
            cv.add(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0 + 0.3:.2f}" '
                   f'height="{y1 - y0 + 0.3:.2f}" fill="{_colour(u)}"/>')
    for k, (ox, oy, label) in enumerate(overlays):
        _polyline(cv, ox, oy, "#ffffff" if k == 0 else _LINE_COLOURS[k % len(_LINE_COLOURS)])
    if marker is not None:
        mx, my = cv.x(marker[0]), cv.y(marker[1])
        cv.add(f'<circle cx="{mx:.2f}" cy="{my:.2f}" r="5" fill="none" stroke="red" '
               f'stroke-width="2"/>')
    # colour bar
    bx = WIDTH - RIGHT + 15
    for k in range(50):
        yy = TOP + cv.ph * (1 - (k + 1) / 50)
        cv.add(f'<rect x="{bx}" y="{yy:.2f}" width="14" height="{cv.ph / 50 + 0.3:.2f}" '
               f'fill="{_colour(k / 49)}"/>')
    unit = "log10 " if log_scale else ""
    cv.add(f'<text x="{bx}" y="{TOP - 4}">{escape(unit)}{_num(hi)}</text>')
    cv.add(f'<text x="{bx}" y="{TOP + cv.ph + 12}">{escape(unit)}{_num(lo)}</text>')
    return cv.finish()


def _polyline(cv, xs, ys, colour, width=1.5, dash=None):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = np.isfinite(xs) & np.isfinite(ys)
    if ok.sum() < 2:
        for a, b in zip(xs[ok], ys[ok]):
            cv.add(f'<circle cx="{cv.x(a):.2f}" cy="{cv.y(b):.2f}" r="2" fill="{colour}"/>')
        return
    pts = " ".join(f"{cv.x(a):.2f},{cv.y(b):.2f}" for a, b in zip(xs[ok], ys[ok]))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    cv.add(f'<polyline points="{pts}" fill="none" stroke="{colour}" '
           f'stroke-width="{width}"{extra}/>')


def lines_svg(series: Sequence[Tuple[np.ndarray, np.ndarray, str]], title: str = "",
              xlabel: str = "", ylabel: str = "", invert_y: bool = False,
              comment: str = "") -> str:
    """Line chart of ``(x, y, label)`` series with a legend."""
    xs = np.concatenate([np.asarray(s[0], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    xlim = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    ylim = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if ylim[0] == ylim[1]:
        ylim = (ylim[0] - 1, ylim[1] + 1)
    if xlim[0] == xlim[1]:
        xlim = (xlim[0] - 1, xlim[1] + 1)
    cv = _Canvas(title, xlabel, ylabel, xlim, ylim, invert_y, comment)
    for k, (sx, sy, label) in enumerate(series):
        colour = _LINE_COLOURS[k % len(_LINE_COLOURS)]
        _polyline(cv, sx, sy, colour)
        ly = TOP + 14 * (k + 1)
        cv.add(f'<line x1="{WIDTH - RIGHT + 6}" y1="{ly - 4}" x2="{WIDTH - RIGHT + 20}" '
               f'y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        cv.add(f'<text x="{WIDTH - RIGHT + 24}" y="{ly}">{escape(label)}</text>')
    return cv.finish()

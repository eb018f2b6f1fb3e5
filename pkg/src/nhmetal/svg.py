"""Minimal SVG emitter: heatmaps with curve overlays, error-bar sections, 3D projections."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

HEATMAP_2D, CURVE_OVERLAY, SECTION_1D, CURVE_3D_PROJECTION = (
    "HEATMAP_2D", "CURVE_OVERLAY", "SECTION_1D", "CURVE_3D_PROJECTION")

# (position, rgb) stops
RAMPS = {
    "viridis": [(0.0, (68, 1, 84)), (0.25, (59, 82, 139)), (0.5, (33, 145, 140)),
                (0.75, (94, 201, 98)), (1.0, (253, 231, 37))],
    "gray": [(0.0, (0, 0, 0)), (1.0, (255, 255, 255))],
    "diverging": [(0.0, (59, 76, 192)), (0.5, (221, 221, 221)), (1.0, (180, 4, 38))],
}
PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

W, H, PAD = 420, 380, 50


@dataclass
class PlotSpec:
    kind: str
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    ramp: str = "viridis"
    refs: list[str] = field(default_factory=list)


def color(t: float, ramp: str = "viridis") -> str:
    stops = RAMPS[ramp]
    t = float(np.clip(t, 0.0, 1.0)) if np.isfinite(t) else 0.0
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            u = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            return "#%02x%02x%02x" % tuple(int(round(a + u * (b - a))) for a, b in zip(c0, c1))
    return "#%02x%02x%02x" % stops[-1][1]


class _Canvas:
    def __init__(self, spec: PlotSpec, xr, yr, stamp: bool = True):
        self.spec, self.xr, self.yr = spec, xr, yr
        self.items = []
        if stamp:
            ts = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
            self.items.append(f"<!-- generated {ts} -->")

    def x(self, v):
        lo, hi = self.xr
        return PAD + (v - lo) / (hi - lo or 1) * (W - 2 * PAD)

    def y(self, v):
        lo, hi = self.yr
        return H - PAD - (v - lo) / (hi - lo or 1) * (H - 2 * PAD)

    def polyline(self, xs, ys, stroke, width=1.5, closed=False):
        pts = " ".join(f"{self.x(a):.2f},{self.y(b):.2f}" for a, b in zip(xs, ys))
        tag = "polygon" if closed else "polyline"
        self.items.append(f'<{tag} points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width}"/>')

    def axes(self):
        s = self.spec
        x0, x1, y0, y1 = PAD, W - PAD, PAD, H - PAD
        self.items.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
                          'fill="none" stroke="black"/>')
        for v in np.linspace(*self.xr, 5):
            self.items.append(f'<text x="{self.x(v):.1f}" y="{y1 + 14}" font-size="9" '
                              f'text-anchor="middle">{v:.3g}</text>')
        for v in np.linspace(*self.yr, 5):
            self.items.append(f'<text x="{x0 - 4}" y="{self.y(v) + 3:.1f}" font-size="9" '
                              f'text-anchor="end">{v:.3g}</text>')
        self.items.append(f'<text x="{W / 2}" y="{H - 12}" font-size="11" text-anchor="middle">'
                          f'{escape(s.xlabel)}</text>')
        self.items.append(f'<text x="14" y="{H / 2}" font-size="11" text-anchor="middle" '
                          f'transform="rotate(-90 14 {H / 2})">{escape(s.ylabel)}</text>')
        self.items.append(f'<text x="{W / 2}" y="20" font-size="12" text-anchor="middle">'
                          f'{escape(s.title)}</text>')

    def render(self) -> str:
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                f'viewBox="0 0 {W} {H}">\n{body}\n</svg>\n')


def heatmap(values, xaxis, yaxis, spec: PlotSpec, curves=(), points=(), stamp: bool = True) -> str:
    """values[i, j] sampled at (xaxis[i], yaxis[j]); optional 2D curve and point overlays."""
    values = np.asarray(values, dtype=float)
    xaxis, yaxis = np.asarray(xaxis), np.asarray(yaxis)
    cv = _Canvas(spec, (xaxis[0], xaxis[-1]), (yaxis[0], yaxis[-1]), stamp)
    finite = values[np.isfinite(values)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo or 1.0
    # cell edges halfway between samples
    xe = np.concatenate([[xaxis[0]], 0.5 * (xaxis[1:] + xaxis[:-1]), [xaxis[-1]]])
    ye = np.concatenate([[yaxis[0]], 0.5 * (yaxis[1:] + yaxis[:-1]), [yaxis[-1]]])
    for i in range(len(xaxis)):
        xa, xb = cv.x(xe[i]), cv.x(xe[i + 1])
        for j in range(len(yaxis)):
            ya, yb = cv.y(ye[j + 1]), cv.y(ye[j])
            cv.items.append(f'<rect x="{xa:.2f}" y="{ya:.2f}" width="{xb - xa + 0.3:.2f}" '
                            f'height="{yb - ya + 0.3:.2f}" fill="{color((values[i, j] - lo) / span, spec.ramp)}"/>')
    for n, c in enumerate(curves):
        c = np.asarray(c)
        cv.polyline(c[:, 0], c[:, 1], "white", 2.0)
        cv.polyline(c[:, 0], c[:, 1], PALETTE[n % len(PALETTE)], 1.0)
    for p in points:
        cv.items.append(f'<circle cx="{cv.x(p[0]):.2f}" cy="{cv.y(p[1]):.2f}" r="3" fill="red" stroke="white"/>')
    cv.axes()
    cv.items.append(f'<text x="{W - PAD}" y="{PAD - 6}" font-size="9" text-anchor="end">'
                    f'range [{lo:.3g}, {hi:.3g}]</text>')
    return cv.render()


def section(x, series: dict, spec: PlotSpec, stamp: bool = True) -> str:
    """Line plot of several ``name -> (y, yerr)`` series sharing ``x``, with error bars."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(v[0], dtype=float) for v in series.values()]
    es = [np.asarray(v[1], dtype=float) if v[1] is not None else np.zeros_like(x) for v in series.values()]
    allv = np.concatenate([np.concatenate([y - np.nan_to_num(e), y + np.nan_to_num(e)]) for y, e in zip(ys, es)])
    allv = allv[np.isfinite(allv)]
    lo, hi = (allv.min(), allv.max()) if allv.size else (0.0, 1.0)
    pad = 0.05 * (hi - lo or 1.0)
    cv = _Canvas(spec, (x.min(), x.max()), (lo - pad, hi + pad), stamp)
    for n, (name, y, e) in enumerate(zip(series, ys, es)):
        col = PALETTE[n % len(PALETTE)]
        ok = np.isfinite(y)
        cv.polyline(x[ok], y[ok], col)
        for a, b, err in zip(x[ok], y[ok], np.nan_to_num(e[ok])):
            cv.items.append(f'<line x1="{cv.x(a):.2f}" x2="{cv.x(a):.2f}" y1="{cv.y(b - err):.2f}" '
                            f'y2="{cv.y(b + err):.2f}" stroke="{col}"/>')
            cv.items.append(f'<circle cx="{cv.x(a):.2f}" cy="{cv.y(b):.2f}" r="2" fill="{col}"/>')
        cv.items.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 + 12 * n}" font-size="10" '
                        f'text-anchor="end" fill="{col}">{escape(name)}</text>')
    cv.axes()
    return cv.render()


def projection3d(curves, spec: PlotSpec, direction=(0.3, -0.5, 0.81), stamp: bool = True) -> str:
    """Orthographic projection of 3D polylines along ``direction``; depth encoded by stroke width."""
    v = np.asarray(direction, dtype=float)
    v /= np.linalg.norm(v)
    e1 = np.cross(v, [0, 0, 1.0] if abs(v[2]) < 0.9 else [1.0, 0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(v, e1)
    proj = [(np.asarray(c) @ e1, np.asarray(c) @ e2, np.asarray(c) @ v) for c in curves]
    if proj:
        xs = np.concatenate([p[0] for p in proj])
        ys = np.concatenate([p[1] for p in proj])
        half = 0.55 * max(np.ptp(xs), np.ptp(ys), 1e-9)
        cx, cy = 0.5 * (xs.max() + xs.min()), 0.5 * (ys.max() + ys.min())
        xr, yr = (cx - half, cx + half), (cy - half, cy + half)
        dmin = min(p[2].min() for p in proj)
        dspan = max(p[2].max() for p in proj) - dmin or 1.0
    else:
        xr = yr = (-1.0, 1.0)
    cv = _Canvas(spec, xr, yr, stamp)
    for n, (px, py, pz) in enumerate(proj):
        col = PALETTE[n % len(PALETTE)]
        for i in range(len(px) - 1):
            w = 0.8 + 2.2 * ((0.5 * (pz[i] + pz[i + 1]) - dmin) / dspan)
            cv.items.append(f'<line x1="{cv.x(px[i]):.2f}" y1="{cv.y(py[i]):.2f}" x2="{cv.x(px[i + 1]):.2f}" '
                            f'y2="{cv.y(py[i + 1]):.2f}" stroke="{col}" stroke-width="{w:.2f}"/>')
    cv.axes()
    return cv.render()

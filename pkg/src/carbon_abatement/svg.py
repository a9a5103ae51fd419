"""Minimal static SVG line plots with a CSV sidecar holding every plotted value."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Series", "Band", "Panel", "Figure", "write_figure", "write_sidecar", "PLOT_BOX"]

COLORS = ("#c0392b", "#2e5fa3", "#222222", "#7f7f7f", "#27ae60", "#8e44ad")
DASHES = {"solid": None, "dashed": "6,4", "dotted": "2,3"}

PANEL_W, PANEL_H = 480, 320
MARGIN = dict(left=60, right=20, top=36, bottom=46)
PLOT_BOX = (MARGIN["left"], MARGIN["top"], PANEL_W - MARGIN["left"] - MARGIN["right"], PANEL_H - MARGIN["top"] - MARGIN["bottom"])


@dataclass
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    style: str = "solid"
    color: str | None = None


@dataclass
class Band:
    """Shaded area between ``lo`` and ``hi`` (for example a quantile band)."""

    name: str
    x: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    bands: list = field(default_factory=list)
    shading: list = field(default_factory=list)  # (start, end) spans drawn grey

    def limits(self):
        xs = [np.asarray(s.x) for s in self.series] + [np.asarray(b.x) for b in self.bands]
        ys = [np.asarray(s.y) for s in self.series] + [np.asarray(b.lo) for b in self.bands] + [np.asarray(b.hi) for b in self.bands]
        xs = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        ys = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        ys = ys[np.isfinite(ys)]
        x0, x1 = float(np.min(xs)), float(np.max(xs))
        y0, y1 = (float(np.min(ys)), float(np.max(ys))) if ys.size else (0.0, 1.0)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad


@dataclass
class Figure:
    figure_id: str
    caption: str
    panels: list


def to_pixels(panel: Panel, x, y):
    """Map data coordinates to pixel coordinates inside a panel."""
    x0, x1, y0, y1 = panel.limits()
    left, top, w, h = PLOT_BOX
    px = left + (np.asarray(x, dtype=float) - x0) / (x1 - x0) * w
    py = top + h - (np.asarray(y, dtype=float) - y0) / (y1 - y0) * h
    return px, py


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def _panel_svg(panel: Panel, ox: float) -> list:
    x0, x1, y0, y1 = panel.limits()
    left, top, w, h = PLOT_BOX
    out = [f'<g transform="translate({ox:.0f},0)">']
    out.append(f'<text x="{left + w / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(panel.title)}</text>')
    for a, b in panel.shading:
        pa, _ = to_pixels(panel, [max(a, x0)], [y0])
        pb, _ = to_pixels(panel, [min(b, x1)], [y0])
        out.append(f'<rect class="regime" x="{pa[0]:.2f}" y="{top}" width="{max(pb[0] - pa[0], 0):.2f}" height="{h}" fill="#d9d9d9"/>')
    for band in panel.bands:
        px, plo = to_pixels(panel, band.x, band.lo)
        _, phi = to_pixels(panel, band.x, band.hi)
        pts = [f"{a:.2f},{b:.2f}" for a, b in zip(px, phi)] + [f"{a:.2f},{b:.2f}" for a, b in zip(px[::-1], plo[::-1])]
        out.append(f'<polygon data-band="{escape(band.name)}" points="{" ".join(pts)}" fill="#bbbbbb" fill-opacity="0.5" stroke="none"/>')
    out.append(f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#000"/>')
    for tx in _ticks(x0, x1):
        px, _ = to_pixels(panel, [tx], [y0])
        out.append(f'<text x="{px[0]:.1f}" y="{top + h + 16}" text-anchor="middle" font-size="10">{tx:.3g}</text>')
    for ty in _ticks(y0, y1):
        _, py = to_pixels(panel, [x0], [ty])
        out.append(f'<text x="{left - 6}" y="{py[0] + 3:.1f}" text-anchor="end" font-size="10">{ty:.3g}</text>')
    out.append(f'<text x="{left + w / 2:.1f}" y="{PANEL_H - 8}" text-anchor="middle" font-size="12">{escape(panel.xlabel)}</text>')
    out.append(
        f'<text x="14" y="{top + h / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {top + h / 2:.1f})">{escape(panel.ylabel)}</text>'
    )
    for i, s in enumerate(panel.series):
        color = s.color or COLORS[i % len(COLORS)]
        px, py = to_pixels(panel, s.x, s.y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py) if np.isfinite(b))
        dash = DASHES.get(s.style)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(
            f'<polyline data-series="{escape(s.name)}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash_attr}/>'
        )
        ly = top + 14 + 14 * i
        out.append(f'<line x1="{left + 8}" y1="{ly}" x2="{left + 30}" y2="{ly}" stroke="{color}" stroke-width="1.6"{dash_attr}/>')
        out.append(f'<text x="{left + 34}" y="{ly + 4}" font-size="10">{escape(s.name)}</text>')
    out.append("</g>")
    return out


def write_figure(path, fig: Figure) -> Path:
    path = Path(path)
    width = PANEL_W * max(1, len(fig.panels))
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}">',
        f"<desc>{escape(fig.caption)}</desc>",
        '<rect width="100%" height="100%" fill="#fff"/>',
    ]
    for i, panel in enumerate(fig.panels):
        body += _panel_svg(panel, i * PANEL_W)
    body.append("</svg>")
    path.write_text("\n".join(body) + "\n")
    return path


def write_sidecar(path, fig: Figure) -> Path:
    """Long-format CSV: ``panel,series,kind,x,y`` with every plotted value."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "series", "kind", "x", "y"])
        for panel in fig.panels:
            for s in panel.series:
                for a, b in zip(s.x, s.y):
                    w.writerow([panel.title, s.name, "line", repr(float(a)), repr(float(b))])
            for band in panel.bands:
                for a, lo, hi in zip(band.x, band.lo, band.hi):
                    w.writerow([panel.title, band.name, "band_lo", repr(float(a)), repr(float(lo))])
                    w.writerow([panel.title, band.name, "band_hi", repr(float(a)), repr(float(hi))])
            for a, b in panel.shading:
                w.writerow([panel.title, "high-tax", "shade", repr(float(a)), repr(float(b))])
    return path

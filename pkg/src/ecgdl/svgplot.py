"""Tiny hand-rolled SVG emitters for signal, heat, and trace figures.

Vector output keeps the package free of raster plotting dependencies; every
figure writer has a CSV sibling in its owning module for programmatic use.
Heat values are color coded high-to-low as dark red to dark blue.
"""

from __future__ import annotations

import numpy as np

from .ops import resample_1d

__all__ = ["heat_color", "signal_heat_svg", "panels_svg", "decision_svg", "heat_rows_svg"]

CLASS_COLORS = {"AF": "#d62728", "N": "#2ca02c", "O": "#1f77b4", "Noisy": "#9467bd"}


def heat_color(v: float) -> str:
    """Map [0, 1] onto a dark-blue -> white -> dark-red diverging scale."""
    v = min(max(float(v), 0.0), 1.0)
    if v < 0.5:
        t = v / 0.5
        r, g, b = int(30 + t * 225), int(60 + t * 195), int(150 + t * 105)
    else:
        t = (v - 0.5) / 0.5
        r, g, b = 255, int(255 - t * 215), int(255 - t * 225)
    return f"#{r:02x}{g:02x}{b:02x}"


def _normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo < 1e-12:
        return np.full_like(values, 0.5, dtype=np.float64)
    return (values - lo) / (hi - lo)


def _polyline(xs, ys, color: str, width: float = 1.0) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'


def _trace_points(values, x0, y0, w, h):
    values = np.asarray(values, dtype=np.float64)
    n = min(len(values), int(w))
    vals = resample_1d(values, n) if len(values) > n else values
    norm = _normalize(vals)
    xs = x0 + np.linspace(0, w, len(norm))
    ys = y0 + h - norm * h
    return xs, ys


def _panel(signal, heat, x0, y0, w, h, title):
    parts = []
    if title:
        parts.append(f'<text x="{x0}" y="{y0 - 4}" font-size="11" font-family="sans-serif">{title}</text>')
    parts.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="white" stroke="#ccc"/>')
    if heat is not None:
        cols = int(w)
        hv = _normalize(resample_1d(np.asarray(heat, dtype=np.float64), cols))
        for i, v in enumerate(hv):
            parts.append(f'<rect x="{x0 + i}" y="{y0}" width="1.5" height="{h}" '
                         f'fill="{heat_color(v)}" fill-opacity="0.55"/>')
    if signal is not None:
        xs, ys = _trace_points(signal, x0, y0, w, h)
        parts.append(_polyline(xs, ys, "#000000", 0.8))
    return parts


def _document(parts, width, height) -> str:
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n{body}\n</svg>\n')


def signal_heat_svg(path, signal, heat, title: str = "") -> None:
    """Signal trace over a heat-colored underlay (CAM/attention rendering)."""
    parts = _panel(signal, heat, 10, 20, 980, 200, title)
    with open(path, "w") as fh:
        fh.write(_document(parts, 1000, 240))


def panels_svg(path, panels) -> None:
    """Stack of (title, signal, heat, overlay_signal_or_None) panels."""
    parts = []
    y = 20
    for title, signal, heat, overlay in panels:
        parts.extend(_panel(signal, heat, 10, y, 980, 130, title))
        if overlay is not None:
            xs, ys = _trace_points(overlay, 10, y, 980, 130)
            parts.append(_polyline(xs, ys, "#cc00cc", 0.9))
        y += 160
    with open(path, "w") as fh:
        fh.write(_document(parts, 1000, y + 10))


def decision_svg(path, probs: np.ndarray, class_names, decisions) -> None:
    """Per-class score rows plus a color-coded decision strip."""
    parts = []
    y = 20
    for c, name in enumerate(class_names):
        parts.extend(_panel(probs[:, c], None, 10, y, 940, 55, f"score {name}"))
        y += 80
    parts.append(f'<text x="10" y="{y - 4}" font-size="11" font-family="sans-serif">decision</text>')
    strip_w = 940.0 / max(len(decisions), 1)
    for i, d in enumerate(decisions):
        color = CLASS_COLORS.get(class_names[int(d)], "#888888")
        parts.append(f'<rect x="{10 + i * strip_w:.2f}" y="{y}" width="{strip_w + 0.5:.2f}" '
                     f'height="30" fill="{color}"/>')
    ly = 28
    for name, color in CLASS_COLORS.items():
        parts.append(f'<rect x="960" y="{ly}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="976" y="{ly + 10}" font-size="10" font-family="sans-serif">{name}</text>')
        ly += 18
    with open(path, "w") as fh:
        fh.write(_document(parts, 1000, y + 50))


def heat_rows_svg(path, rows, row_labels) -> None:
    """One heat strip per row (gate/state traces); rows is [n_rows, T]."""
    parts = []
    y = 20
    rows = np.asarray(rows, dtype=np.float64)
    for label, row in zip(row_labels, rows):
        parts.append(f'<text x="10" y="{y + 14}" font-size="10" font-family="sans-serif">{label}</text>')
        cols = 880
        hv = _normalize(resample_1d(row, cols)) if len(row) > 1 else np.full(cols, 0.5)
        for i, v in enumerate(hv):
            parts.append(f'<rect x="{100 + i}" y="{y}" width="1.5" height="20" fill="{heat_color(v)}"/>')
        y += 26
    with open(path, "w") as fh:
        fh.write(_document(parts, 1000, y + 10))

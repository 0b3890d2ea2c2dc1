"""Deterministic SVG rendering of 2-D point clouds and decision regions.

Every coordinate is written with a fixed number of decimals, so identical
inputs give byte-identical documents.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from narrowcap.geometry import as_cloud
from narrowcap.network import Network

DEFAULT_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass(frozen=True)
class RenderSpec:
    view_box: tuple = (0.0, 0.0, 1.0, 1.0)   # xmin, ymin, xmax, ymax in data units
    width: int = 400
    height: int = 400
    colors: tuple = DEFAULT_COLORS
    point_radius: float = 1.5
    resolution: int = 80
    title: str = ""

    def __post_init__(self):
        xmin, ymin, xmax, ymax = map(float, self.view_box)
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("view box must have positive extent")
        if self.width <= 0 or self.height <= 0 or self.point_radius <= 0:
            raise ValueError("sizes must be positive")
        if self.resolution < 2:
            raise ValueError("decision grid resolution must be at least 2")
        if not self.colors:
            raise ValueError("need at least one class colour")

    def to_pixels(self, pts):
        xmin, ymin, xmax, ymax = map(float, self.view_box)
        pts = np.asarray(pts, dtype=float)
        px = (pts[:, 0] - xmin) / (xmax - xmin) * self.width
        py = self.height - (pts[:, 1] - ymin) / (ymax - ymin) * self.height
        return px, py


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _normalise(clouds):
    if not clouds:
        raise ValueError("nothing to render: empty cloud list")
    out = []
    for cloud, cls in clouds:
        pts = as_cloud(cloud).points
        if pts.shape[1] != 2:
            raise ValueError(f"render_svg needs 2-D points, got dimension {pts.shape[1]}")
        out.append((pts, float(cls)))
    return out


def _decision_rects(net: Network, spec: RenderSpec, class_ids, color_of):
    if net.input_dim != 2 or net.output_dim != 1:
        raise ValueError("decision shading needs a scalar network on the plane")
    if len(class_ids) < 2:
        raise ValueError("decision shading needs two distinct class values")
    lo, hi = min(class_ids), max(class_ids)
    threshold = 0.5 * (lo + hi)
    xmin, ymin, xmax, ymax = map(float, spec.view_box)
    r = spec.resolution
    dx, dy = (xmax - xmin) / r, (ymax - ymin) / r
    cx = xmin + dx * (np.arange(r) + 0.5)
    cy = ymin + dy * (np.arange(r) + 0.5)
    gx, gy = np.meshgrid(cx, cy, indexing="xy")
    values = net.forward(np.column_stack([gx.ravel(), gy.ravel()]))[:, 0].reshape(r, r)
    cw, ch = spec.width / r, spec.height / r
    lines = ['<g id="decision" fill-opacity="0.18">']
    for i in range(r):           # rows, bottom to top in data space
        for j in range(r):
            cls = hi if values[i, j] >= threshold else lo
            x = j * cw
            y = spec.height - (i + 1) * ch
            lines.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cw)}" '
                         f'height="{_fmt(ch)}" fill="{color_of(cls)}"/>')
    lines.append("</g>")
    return lines


def render_svg(clouds, spec: RenderSpec | None = None, net: Network | None = None) -> bytes:
    """SVG scatter plot of ``[(cloud, class_id), ...]`` with optional decision shading.

    Shading colours each grid cell by thresholding the network output at the
    midpoint of the smallest and largest class values.
    """
    spec = spec or RenderSpec()
    items = _normalise(clouds)
    class_ids = sorted({cls for _, cls in items})
    palette = {c: spec.colors[i % len(spec.colors)] for i, c in enumerate(class_ids)}
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.width}" '
        f'height="{spec.height}" viewBox="0 0 {spec.width} {spec.height}">',
        f'<rect x="0" y="0" width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
    ]
    if net is not None:
        lines += _decision_rects(net, spec, class_ids, palette.__getitem__)
    for k, (pts, cls) in enumerate(items):
        lines.append(f'<g id="cloud{k}" fill="{palette[cls]}">')
        px, py = spec.to_pixels(pts)
        for x, y in zip(px, py):
            lines.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(spec.point_radius)}"/>')
        lines.append("</g>")
    if spec.title:
        lines.append(f'<text x="{_fmt(spec.width / 2)}" y="14" font-size="12" '
                     f'text-anchor="middle" font-family="sans-serif">{escape(spec.title)}</text>')
    lines.append("</svg>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def fitted_view_box(arrays, pad=0.05):
    """Bounding box of the given point arrays, padded by a fraction of its size."""
    pts = np.vstack([np.asarray(a, dtype=float)[:, :2] for a in arrays if len(a)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    lo, hi = lo - pad * span, hi + pad * span
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def render_snapshot_panels(snapshots, columns=4, panel=220) -> bytes:
    """One panel per snapshot stage, laid out in a grid like a layer-by-layer figure.

    One-dimensional stages are drawn on a line at height zero.
    """
    if not snapshots:
        raise ValueError("no snapshots to render")
    rows = -(-len(snapshots) // columns)
    W, H = columns * panel, rows * panel
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
    ]
    for k, snap in enumerate(snapshots):
        clouds = []
        for cls, arr in sorted(snap.clouds.items()):
            arr = np.asarray(arr, dtype=float)
            if arr.shape[1] == 1:
                arr = np.column_stack([arr[:, 0], np.zeros(len(arr))])
            clouds.append((arr[:, :2], cls))
        spec = RenderSpec(view_box=fitted_view_box([a for a, _ in clouds]), width=panel,
                          height=panel, point_radius=1.0, title=snap.label)
        body = render_svg(clouds, spec).decode("utf-8").splitlines()[3:-1]
        x, y = (k % columns) * panel, (k // columns) * panel
        out.append(f'<g transform="translate({x},{y})">')
        out.append(f'<rect x="0" y="0" width="{panel}" height="{panel}" fill="none" stroke="#cccccc"/>')
        out += body
        out.append("</g>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")

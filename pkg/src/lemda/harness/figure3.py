"""SVG rendering of the consistency-preference scenario.

The picture shows ground-truth task loss as background shading, the true
boundary (dashed), the trained model's boundary (solid), and the source
point with its two equidistant probes. The numbers shown in the picture are
also written to a CSV next to the SVG.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..datagen import Figure3Probe, gen_figure3_scenario

EXTENT = 2.5
GRID = 40
SIZE = 480
CSV_COLUMNS = ("point", "x", "y", "distance_to_src", "task_loss", "model_task_loss",
               "consistency", "predicted", "src_label")


def _to_px(x: float, y: float) -> Tuple[float, float]:
    scale = SIZE / (2 * EXTENT)
    return (x + EXTENT) * scale, (EXTENT - y) * scale


def zero_crossings(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> List[tuple]:
    """Line segments where a gridded field changes sign (marching squares).

    ``values[i, j]`` is the field at ``(xs[j], ys[i])``. Saddle cells are
    joined in a fixed order, which is fine for a picture.
    """
    segs = []
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            corners = [(xs[j], ys[i], values[i, j]), (xs[j + 1], ys[i], values[i, j + 1]),
                       (xs[j + 1], ys[i + 1], values[i + 1, j + 1]), (xs[j], ys[i + 1], values[i + 1, j])]
            pts = []
            for k in range(4):
                (x0, y0, v0), (x1, y1, v1) = corners[k], corners[(k + 1) % 4]
                if (v0 > 0) != (v1 > 0):
                    t = v0 / (v0 - v1)
                    pts.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
            for a in range(0, len(pts) - 1, 2):
                segs.append((pts[a], pts[a + 1]))
    return segs


def _heat_color(v: float, vmax: float) -> str:
    t = min(max(v / vmax, 0.0), 1.0)
    r = int(255 - 40 * t)
    g = int(250 - 170 * t)
    b = int(240 - 200 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def probe_rows(probe: Figure3Probe) -> List[dict]:
    points = np.stack([probe.src, probe.d1, probe.d2])
    loss = probe.task_loss(points)
    model_loss = probe.model_task_loss(points)
    cons = probe.consistency(points)
    pred = probe.predicted(points)
    rows = []
    for k, name in enumerate(("src", "D1", "D2")):
        rows.append({
            "point": name, "x": points[k, 0], "y": points[k, 1],
            "distance_to_src": float(np.linalg.norm(points[k] - probe.src)),
            "task_loss": loss[k], "model_task_loss": model_loss[k], "consistency": cons[k],
            "predicted": int(pred[k]), "src_label": probe.src_label,
        })
    return rows


def _svg(probe: Figure3Probe, rows: List[dict]) -> str:
    xs = np.linspace(-EXTENT, EXTENT, GRID + 1)
    ys = np.linspace(-EXTENT, EXTENT, GRID + 1)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    loss = probe.task_loss(pts).reshape(gx.shape)
    margin = probe.probs(pts)[:, 1].reshape(gx.shape) - 0.5
    cell = SIZE / GRID
    vmax = float(loss.max())
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
           f'viewBox="0 0 {SIZE} {SIZE}">',
           '<g id="task-loss">']
    for i in range(GRID):
        for j in range(GRID):
            v = loss[i:i + 2, j:j + 2].mean()
            px, py = _to_px(xs[j], ys[i + 1])
            out.append(f'<rect x="{px:.2f}" y="{py:.2f}" width="{cell:.2f}" height="{cell:.2f}" '
                       f'fill="{_heat_color(v, vmax)}"/>')
    out.append("</g>")

    # true boundary: normal . p = offset, drawn across the frame
    n, c = probe.normal, probe.offset
    tangent = np.array([-n[1], n[0]])
    foot = n * c
    a, b = foot - 4 * EXTENT * tangent, foot + 4 * EXTENT * tangent
    (x0, y0), (x1, y1) = _to_px(*a), _to_px(*b)
    out.append(f'<line id="true-boundary" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
               'stroke="#333333" stroke-width="2" stroke-dasharray="6,4"/>')

    out.append('<g id="model-boundary" stroke="#1f4e9c" stroke-width="2">')
    for (p0, p1) in zero_crossings(margin, xs, ys):
        (x0, y0), (x1, y1) = _to_px(*p0), _to_px(*p1)
        out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}"/>')
    out.append("</g>")

    out.append('<g id="probes" font-family="sans-serif" font-size="12">')
    colors = {"src": "#000000", "D1": "#2a9d3a", "D2": "#c0392b"}
    for row in rows:
        px, py = _to_px(row["x"], row["y"])
        label = row["point"] if row["point"] == "src" else f'{row["point"]} KL={row["consistency"]:.3f}'
        out.append(f'<g class="probe" data-name="{row["point"]}">'
                   f'<circle cx="{px:.2f}" cy="{py:.2f}" r="5" fill="{colors[row["point"]]}"/>'
                   f'<text x="{px + 8:.2f}" y="{py - 8:.2f}">{label}</text></g>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_figure3(output_path, seed: int = 0) -> Tuple[Path, Path, Figure3Probe]:
    """Train the probe model, write the SVG and its sidecar CSV.

    Returns ``(svg_path, csv_path, probe)``. The CSV has the same stem as the
    SVG and holds full-precision values.
    """
    svg_path = Path(output_path)
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    _, probe = gen_figure3_scenario(seed)
    rows = probe_rows(probe)
    svg_path.write_text(_svg(probe, rows))
    csv_path = svg_path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([row[c] if isinstance(row[c], (int, str)) else repr(float(row[c]))
                        for c in CSV_COLUMNS])
    return svg_path, csv_path, probe

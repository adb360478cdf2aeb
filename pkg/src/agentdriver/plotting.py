"""Bird's-eye-view SVG rendering of one scene and its pipeline output.

Detections are blue boxes, objects named as notable by the reasoning
stage are outlined red, the planned trajectory is a red polyline, the
human (ground-truth) trajectory a green one; an optional occupancy heat
layer shades cells by their maximum probability over the horizon.
SVG y grows downward, so the forward (+y) axis is flipped.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .scene import SceneSnapshot

PLANNED_COLOR = "#d62728"  # red
GT_COLOR = "#2ca02c"  # green
DETECTION_COLOR = "#1f77b4"  # blue
NOTABLE_COLOR = "#d62728"

_PAD = 5.0
_MIN_HALF = 20.0


def _svg_points(points: list[list[float]]) -> str:
    return " ".join(f"{x:.2f},{-y:.2f}" for x, y in points)


def _box_polygon(cx: float, cy: float, length: float, width: float, heading: float) -> str:
    sin_h, cos_h = math.sin(heading), math.cos(heading)
    fwd = (-sin_h, cos_h)
    right = (cos_h, sin_h)
    hl, hw = length / 2.0, width / 2.0
    corners = []
    for sf, sr in ((1, 1), (1, -1), (-1, -1), (-1, 1)):
        x = cx + sf * hl * fwd[0] + sr * hw * right[0]
        y = cy + sf * hl * fwd[1] + sr * hw * right[1]
        corners.append(f"{x:.2f},{-y:.2f}")
    return " ".join(corners)


def render_bev_svg(output: dict, snap: SceneSnapshot, include_occupancy: bool = False) -> str:
    """Render the overlay; output is a serialized PipelineOutput document."""
    xs = [0.0]
    ys = [0.0]
    for d in snap.detections:
        xs.append(d.center[0])
        ys.append(d.center[1])
    for p in output.get("trajectory", []):
        xs.append(p[0])
        ys.append(p[1])
    if snap.gt_trajectory is not None:
        for x, y in snap.gt_trajectory.points:
            xs.append(x)
            ys.append(y)
    half_x = max(_MIN_HALF, max(abs(v) for v in xs) + _PAD)
    half_y = max(_MIN_HALF, max(abs(v) for v in ys) + _PAD)

    notable = set()
    reasoning = output.get("reasoning", {})
    for entry in reasoning.get("notable_objects", []) if isinstance(reasoning, dict) else []:
        notable.add(str(entry[0]).strip())

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{-half_x:.2f} {-half_y:.2f} '
        f'{2 * half_x:.2f} {2 * half_y:.2f}" width="800" height="800">',
        f'<rect x="{-half_x:.2f}" y="{-half_y:.2f}" width="{2 * half_x:.2f}" height="{2 * half_y:.2f}" fill="#f8f8f8"/>',
    ]

    if include_occupancy:
        occ = snap.occupancy
        peak = occ.values.max(axis=0)
        for ix in range(occ.dims[0]):
            for iy in range(occ.dims[1]):
                p = float(peak[ix, iy])
                if p <= 0.05:
                    continue
                x0 = occ.origin[0] + ix * occ.resolution
                y0 = occ.origin[1] + (iy + 1) * occ.resolution
                parts.append(
                    f'<rect class="occupancy" x="{x0:.2f}" y="{-y0:.2f}" '
                    f'width="{occ.resolution:.2f}" height="{occ.resolution:.2f}" '
                    f'fill="#ff7f0e" fill-opacity="{0.6 * p:.3f}"/>'
                )

    for crossing in snap.map.ped_crossings:
        parts.append(
            f'<circle class="crossing" cx="{crossing[0]:.2f}" cy="{-crossing[1]:.2f}" r="0.8" '
            f'fill="none" stroke="#9467bd" stroke-width="0.2"/>'
        )

    for d in snap.detections:
        stroke = NOTABLE_COLOR if d.object_id in notable else DETECTION_COLOR
        width = 0.35 if d.object_id in notable else 0.2
        parts.append(
            f'<polygon class="detection" points="{_box_polygon(*d.center, *d.size, d.heading)}" '
            f'fill="{DETECTION_COLOR}" fill-opacity="0.25" stroke="{stroke}" stroke-width="{width}"/>'
        )
        parts.append(
            f'<text x="{d.center[0]:.2f}" y="{-d.center[1]:.2f}" font-size="1.2" '
            f'fill="#333">{escape(d.object_id)}</text>'
        )

    # ego footprint at the origin
    parts.append(
        f'<polygon class="ego" points="{_box_polygon(0.0, 0.0, 4.08, 1.73, 0.0)}" '
        f'fill="#555" fill-opacity="0.5" stroke="#222" stroke-width="0.2"/>'
    )

    if snap.gt_trajectory is not None:
        parts.append(
            f'<polyline class="gt" points="{_svg_points(snap.gt_trajectory.to_list())}" '
            f'fill="none" stroke="{GT_COLOR}" stroke-width="0.3"/>'
        )
    planned = output.get("trajectory")
    if planned:
        parts.append(
            f'<polyline class="planned" points="{_svg_points(planned)}" '
            f'fill="none" stroke="{PLANNED_COLOR}" stroke-width="0.3"/>'
        )

    parts.append("</svg>")
    return "\n".join(parts)

"""SVG rendering of a lap: track, constraint map, planned and driven paths, blame regions."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from raceloop.blame import BlameRegion, sign_zones
from raceloop.constraint_map import ConstraintMap
from raceloop.timing import TimedTrajectory
from raceloop.track import TrackModel

ZONE_COLORS = {1: "#d62728", -1: "#1f77b4", 0: "#7f7f7f"}
CANVAS_WIDTH = 1000.0


def cell_color(m: float, m_min: float, m_max: float) -> tuple[str, float]:
    """Fill color and opacity of a map cell: blue below 1, red above, none at 1."""
    if m < 1.0:
        return "#0000ff", float(np.clip((1.0 - m) / max(1.0 - m_min, 1e-12), 0.0, 1.0))
    if m > 1.0:
        return "#ff0000", float(np.clip((m - 1.0) / max(m_max - 1.0, 1e-12), 0.0, 1.0))
    return "#ffffff", 0.0


def _points(xy: NDArray[np.float64], closed: bool = False) -> str:
    pts = np.vstack([xy, xy[:1]]) if closed else xy
    return " ".join(f"{x:.4f},{y:.4f}" for x, y in pts)


def render_svg(
    track: TrackModel,
    trajectory: TimedTrajectory | None = None,
    cmap: ConstraintMap | None = None,
    lap_log: object | None = None,
    regions: Sequence[BlameRegion] = (),
    deadband: float = 0.0,
) -> str:
    """Layered SVG document; layers without data are left empty.

    ``lap_log`` is anything with a ``positions`` array (an executed path).
    Drawing coordinates are meters with the y axis flipped by a group transform.
    """
    if cmap is not None:
        x1, y1, x2, y2 = cmap.extent
    else:
        x1, y1, x2, y2 = track.bounds(0.5)
    w, h = x2 - x1, y2 - y1
    px = CANVAS_WIDTH / w
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=f"{CANVAS_WIDTH:.0f}",
        height=f"{h * px:.0f}",
        viewBox=f"{x1:.6g} {-y2:.6g} {w:.6g} {h:.6g}",
    )
    root = ET.SubElement(svg, "g", transform="scale(1,-1)")
    stroke = 1.5 / px

    heat = ET.SubElement(root, "g", id="map")
    if cmap is not None:
        nx, ny = cmap.shape
        r = cmap.resolution
        for ix in range(nx):
            for iy in range(ny):
                m = float(cmap.M[ix, iy])
                color, alpha = cell_color(m, cmap.m_min, cmap.m_max)
                if alpha <= 0.0:
                    continue
                ET.SubElement(
                    heat,
                    "rect",
                    x=f"{cmap.x0 + ix * r:.6g}",
                    y=f"{cmap.y0 + iy * r:.6g}",
                    width=f"{r:.6g}",
                    height=f"{r:.6g}",
                    fill=color,
                    attrib={"fill-opacity": f"{alpha:.4f}", "data-ix": str(ix), "data-iy": str(iy), "data-m": f"{m:.6g}"},
                )

    bounds = ET.SubElement(root, "g", id="track", fill="none", stroke="#000000")
    left, right = track.boundaries()
    for line in (left, right):
        ET.SubElement(bounds, "polyline", points=_points(line, closed=True), attrib={"stroke-width": f"{stroke:.4g}"})

    plan = ET.SubElement(root, "g", id="planned", fill="none")
    zones = ET.SubElement(root, "g", id="zones", fill="none")
    if trajectory is not None:
        ET.SubElement(
            plan,
            "polyline",
            points=_points(trajectory.position, closed=True),
            stroke="#2ca02c",
            attrib={"stroke-width": f"{stroke:.4g}", "stroke-dasharray": f"{4 * stroke:.4g}"},
        )
        S = sign_zones(trajectory.a_par, deadband).S
        pos = trajectory.position
        n = pos.shape[0]
        start = 0
        for i in range(1, n + 1):
            if i == n or S[i] != S[start]:
                seg = pos[np.arange(start, min(i + 1, n + 1)) % n]
                ET.SubElement(
                    zones,
                    "polyline",
                    points=_points(seg),
                    stroke=ZONE_COLORS[int(S[start])],
                    attrib={"stroke-width": f"{3 * stroke:.4g}", "stroke-opacity": "0.5", "data-sign": str(int(S[start]))},
                )
                start = i

    driven = ET.SubElement(root, "g", id="executed", fill="none")
    positions = getattr(lap_log, "positions", None)
    if positions is not None and len(positions) > 1:
        ET.SubElement(driven, "polyline", points=_points(np.asarray(positions)), stroke="#000000", attrib={"stroke-width": f"{stroke:.4g}"})

    blame = ET.SubElement(root, "g", id="blame", fill="none")
    for reg in regions:
        if len(reg) < 1:
            continue
        color = "#1f3fff" if reg.e < 0 else "#ff7f0e"
        ET.SubElement(
            blame,
            "polyline",
            points=_points(reg.positions),
            stroke=color,
            attrib={"stroke-width": f"{5 * stroke:.4g}", "stroke-opacity": "0.6", "data-e": f"{reg.e:.6g}"},
        )
    return ET.tostring(svg, encoding="unicode", xml_declaration=False) + "\n"

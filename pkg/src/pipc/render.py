"""Static SVG rendering of executed trajectories and planned horizons."""

from __future__ import annotations

import numpy as np

SCALE = 20.0      # pixels per meter
MARGIN = 1.0      # meters of padding around the arena

EXECUTED_COLOR = "#2ca02c"
HORIZON_COLOR = "#000000"
OBSTACLE_COLOR = "#8c8c8c"


def world_to_svg(x: float, y: float, height: float) -> tuple[float, float]:
    """Map world coordinates (y up) to SVG pixel coordinates (y down)."""
    return (x + MARGIN) * SCALE, (height + MARGIN - y) * SCALE


def svg_to_world(sx: float, sy: float, height: float) -> tuple[float, float]:
    return sx / SCALE - MARGIN, height + MARGIN - sy / SCALE


def _polyline(points_px, color: str, ident: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points_px)
    return (
        f'<polyline id="{ident}" fill="none" stroke="{color}" '
        f'stroke-width="2" points="{pts}"/>'
    )


def render_svg(
    executed_xy: np.ndarray,
    horizon_xy: np.ndarray | None,
    obstacle_centers: np.ndarray,
    start: tuple[float, float],
    goal: tuple[float, float],
    width: float = 30.0,
    height: float = 20.0,
    half_extent: float = 0.5,
    executed_color: str = EXECUTED_COLOR,
    horizon_color: str = HORIZON_COLOR,
) -> str:
    """Build an SVG scene: arena, obstacle boxes, executed path, planned horizon."""
    w_px = (width + 2 * MARGIN) * SCALE
    h_px = (height + 2 * MARGIN) * SCALE
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.0f}" '
        f'height="{h_px:.0f}" viewBox="0 0 {w_px:.0f} {h_px:.0f}">',
        f'<rect width="{w_px:.0f}" height="{h_px:.0f}" fill="white"/>',
    ]
    ax, ay = world_to_svg(0.0, height, height)
    parts.append(
        f'<rect id="arena" x="{ax:.2f}" y="{ay:.2f}" width="{width * SCALE:.2f}" '
        f'height="{height * SCALE:.2f}" fill="none" stroke="black" stroke-width="1"/>'
    )
    side = 2 * half_extent * SCALE
    for cx, cy in np.asarray(obstacle_centers).reshape(-1, 2):
        px, py = world_to_svg(cx - half_extent, cy + half_extent, height)
        parts.append(
            f'<rect class="obstacle" x="{px:.2f}" y="{py:.2f}" width="{side:.2f}" '
            f'height="{side:.2f}" fill="{OBSTACLE_COLOR}"/>'
        )
    executed_xy = np.asarray(executed_xy).reshape(-1, 2)
    if executed_xy.shape[0] >= 2:
        pts = [world_to_svg(x, y, height) for x, y in executed_xy]
        parts.append(_polyline(pts, executed_color, "executed"))
    if horizon_xy is not None:
        horizon_xy = np.asarray(horizon_xy).reshape(-1, 2)
        if horizon_xy.shape[0] >= 2:
            pts = [world_to_svg(x, y, height) for x, y in horizon_xy]
            parts.append(_polyline(pts, horizon_color, "horizon"))
    for (px, py), color, ident in (
        (start, "#1f77b4", "start"),
        (goal, "#d62728", "goal"),
    ):
        sx, sy = world_to_svg(px, py, height)
        parts.append(f'<circle id="{ident}" cx="{sx:.2f}" cy="{sy:.2f}" r="5" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

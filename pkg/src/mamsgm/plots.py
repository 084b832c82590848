"""Deterministic SVG rendering of world geometry and trajectories.

Plots are built by string assembly with fixed two-decimal pixel
formatting, so the same inputs always produce byte-identical files and
golden-file comparisons stay meaningful.  Executed paths draw solid,
planned paths dashed; circle markers sit at segment starting points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Scenario

__all__ = ["Trace", "render", "trajectory_traces", "episode_traces", "save_svg"]

AGENT_COLORS = ("#1f6fb4", "#d1495b")
PLAN_COLOR = "#3fa66a"
WORLD_FILL = "#fcfcf7"
OBSTACLE_FILL = "#b8b8b8"
ZONE_FILL = "#cde8cf"
GOAL_COLOR = "#8a6d1a"

_PAD = 0.1  # world units of margin around the box


@dataclass
class Trace:
    """One polyline to draw: ``points`` is ``(T, 2)`` in world coordinates."""

    points: np.ndarray
    label: str
    color: str
    dashed: bool = False
    markers: int = 0  # circle marker stride in steps; 0 draws none


class _Canvas:
    def __init__(self, scenario: Scenario, size: int):
        self.size = size
        span = 2.0 * (scenario.half_extent + _PAD)
        self.scale = size / span
        self.off = scenario.half_extent + _PAD

    def x(self, wx: float) -> float:
        return (wx + self.off) * self.scale

    def y(self, wy: float) -> float:
        # SVG grows downward; world grows upward.
        return (self.off - wy) * self.scale


def _f(v: float) -> str:
    return f"{v:.2f}"


def _rect(c: _Canvas, x0, x1, y0, y1, fill, extra="") -> str:
    return (
        f'<rect x="{_f(c.x(x0))}" y="{_f(c.y(y1))}" width="{_f((x1 - x0) * c.scale)}" '
        f'height="{_f((y1 - y0) * c.scale)}" fill="{fill}"{extra}/>'
    )


def _world_layers(scenario: Scenario, c: _Canvas) -> list[str]:
    he = scenario.half_extent
    parts = [_rect(c, -he, he, -he, he, WORLD_FILL, ' stroke="#444444" stroke-width="1.5"')]
    if scenario.safe_zone is not None:
        z = scenario.safe_zone
        parts.append(_rect(c, z.x0, z.x1, z.y0, z.y1, ZONE_FILL))
    for box in scenario.obstacles:
        parts.append(_rect(c, box.x0, box.x1, box.y0, box.y1, OBSTACLE_FILL))
    if scenario.goal is not None:
        gx, gy = scenario.goal
        r = _f(0.06 * c.scale)
        parts.append(
            f'<circle cx="{_f(c.x(gx))}" cy="{_f(c.y(gy))}" r="{r}" fill="none" '
            f'stroke="{GOAL_COLOR}" stroke-width="2"/>'
        )
    return parts


def _trace_layers(trace: Trace, c: _Canvas) -> list[str]:
    pts = np.asarray(trace.points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValueError("a trace needs (T, 2) world points")
    coords = " ".join(f"{_f(c.x(p[0]))},{_f(c.y(p[1]))}" for p in pts)
    dash = ' stroke-dasharray="6 4"' if trace.dashed else ""
    parts = [
        f'<polyline points="{coords}" fill="none" stroke="{trace.color}" stroke-width="1.8"{dash}/>'
    ]
    if trace.markers > 0:
        for t in range(0, pts.shape[0], trace.markers):
            parts.append(
                f'<circle cx="{_f(c.x(pts[t, 0]))}" cy="{_f(c.y(pts[t, 1]))}" r="4" '
                f'fill="none" stroke="{trace.color}" stroke-width="1.5"/>'
            )
    return parts


def _legend(traces: list[Trace], c: _Canvas) -> list[str]:
    parts = []
    seen = []
    for tr in traces:
        if tr.label and tr.label not in seen:
            seen.append(tr.label)
            y = 18 + 16 * (len(seen) - 1)
            dash = ' stroke-dasharray="6 4"' if tr.dashed else ""
            parts.append(f'<line x1="10" y1="{y}" x2="34" y2="{y}" stroke="{tr.color}" stroke-width="1.8"{dash}/>')
            parts.append(
                f'<text x="40" y="{y + 4}" font-family="sans-serif" font-size="12" fill="#222222">{tr.label}</text>'
            )
    return parts


def render(scenario: Scenario, traces: list[Trace], size: int = 440) -> str:
    """Full SVG document: world geometry, traces, then the legend."""
    if not traces:
        raise ValueError("nothing to plot")
    c = _Canvas(scenario, size)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">'
    ]
    parts += _world_layers(scenario, c)
    for tr in traces:
        parts += _trace_layers(tr, c)
    parts += _legend(traces, c)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def trajectory_traces(positions: np.ndarray, segment_length: int) -> list[Trace]:
    """Both agents of a recorded ``(T, 2, 2)`` position array."""
    return [
        Trace(positions[:, 0], "agent x", AGENT_COLORS[0], markers=segment_length),
        Trace(positions[:, 1], "agent y", AGENT_COLORS[1], markers=segment_length),
    ]


def episode_traces(record, scenario: Scenario) -> list[Trace]:
    """Executed paths solid with segment markers, re-plans dashed."""
    traces = trajectory_traces(record.executed.positions, scenario.segment_length)
    for i, planned in enumerate(record.planned):
        if planned is None:
            continue
        traces.append(Trace(np.asarray(planned).T, "planned" if i == 0 else "", PLAN_COLOR, dashed=True))
    return traces


def save_svg(path, text: str):
    with open(path, "w") as fh:
        fh.write(text)

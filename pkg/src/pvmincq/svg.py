"""Static SVG scatter plots: samples, matching arrows and the vote's decision grid."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from pvmincq.dataset import LabeledSample
from pvmincq.mincq import MajorityVote
from pvmincq.pv import Matching

WIDTH = 600
HEIGHT = 600
PAD = 20
GRID_RESOLUTION = 100

POSITIVE_REGION = "#dbe8f6"
NEGATIVE_REGION = "#f8dede"
SOURCE_COLORS = {1: "#1f5fa8", -1: "#b3261e"}
TARGET_COLORS = {1: "#7fb0e6", -1: "#ee9a8f"}
UNLABELED_TARGET = "#f28e2b"
ARROW = "#555555"


class _Frame:
    """Maps data coordinates onto the drawing area (y axis pointing up)."""

    def __init__(self, points: np.ndarray, margin: float = 0.05):
        low = points.min(axis=0)
        high = points.max(axis=0)
        span = np.where(high - low > 0, high - low, 1.0)
        self.low = low - margin * span
        self.high = high + margin * span
        self.scale = np.array([WIDTH - 2 * PAD, HEIGHT - 2 * PAD]) / (self.high - self.low)

    def __call__(self, xy) -> tuple[float, float]:
        x = PAD + (xy[0] - self.low[0]) * self.scale[0]
        y = HEIGHT - PAD - (xy[1] - self.low[1]) * self.scale[1]
        return float(x), float(y)


def _decision_grid(vote: MajorityVote, frame: _Frame) -> list[str]:
    xs = np.linspace(frame.low[0], frame.high[0], GRID_RESOLUTION + 1)
    ys = np.linspace(frame.low[1], frame.high[1], GRID_RESOLUTION + 1)
    centers_x = (xs[:-1] + xs[1:]) / 2
    centers_y = (ys[:-1] + ys[1:]) / 2
    xx, yy = np.meshgrid(centers_x, centers_y)
    labels = vote.predict(np.c_[xx.ravel(), yy.ravel()]).reshape(xx.shape)

    cell_w = (WIDTH - 2 * PAD) / GRID_RESOLUTION
    cell_h = (HEIGHT - 2 * PAD) / GRID_RESOLUTION
    parts = ['<g id="decision" shape-rendering="crispEdges">']
    for row in range(GRID_RESOLUTION):
        # one rectangle per run of equal predictions along the row
        top = HEIGHT - PAD - (row + 1) * cell_h
        start = 0
        for col in range(1, GRID_RESOLUTION + 1):
            if col == GRID_RESOLUTION or labels[row, col] != labels[row, start]:
                color = POSITIVE_REGION if labels[row, start] > 0 else NEGATIVE_REGION
                parts.append(
                    f'<rect x="{PAD + start * cell_w:.2f}" y="{top:.2f}" '
                    f'width="{(col - start) * cell_w:.2f}" height="{cell_h:.2f}" fill="{color}"/>'
                )
                start = col
    parts.append("</g>")
    return parts


def _circles(points, colors, frame: _Frame, radius: float, hollow: bool) -> list[str]:
    parts = []
    for xy, color in zip(points, colors):
        cx, cy = frame(xy)
        if hollow:
            style = f'fill="none" stroke="{color}" stroke-width="1.2"'
        else:
            style = f'fill="{color}"'
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius}" {style}/>')
    return parts


def render(
    source: LabeledSample,
    target,
    vote: MajorityVote | None = None,
    matching: Matching | None = None,
    title: str = "",
) -> str:
    """SVG document for one adaptation task.

    `target` may be labeled (true labels color the hollow markers) or not.
    Matching arrows go from the source point to its matched target point.
    """
    frame = _Frame(np.vstack([source.points, target.points]))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        "<defs>",
        '<marker id="head" viewBox="0 0 10 10" refX="10" refY="5" '
        'markerWidth="5" markerHeight="5" orient="auto-start-reverse">',
        f'<path d="M 0 0 L 10 5 L 0 10 z" fill="{ARROW}"/>',
        "</marker>",
        "</defs>",
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if vote is not None:
        parts.extend(_decision_grid(vote, frame))

    labels = getattr(target, "labels", None)
    target_colors = (
        [TARGET_COLORS[int(y)] for y in labels]
        if labels is not None
        else [UNLABELED_TARGET] * len(target)
    )
    parts.append('<g id="target">')
    parts.extend(_circles(target.points, target_colors, frame, 3, hollow=True))
    parts.append("</g>")
    parts.append('<g id="source">')
    source_colors = [SOURCE_COLORS[int(y)] for y in source.labels]
    parts.extend(_circles(source.points, source_colors, frame, 2.5, hollow=False))
    parts.append("</g>")

    if matching is not None:
        parts.append(f'<g id="matching" stroke="{ARROW}" stroke-width="0.7">')
        for s, t in matching.pairs:
            x1, y1 = frame(source.points[s])
            x2, y2 = frame(target.points[t])
            parts.append(
                f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                'marker-end="url(#head)"/>'
            )
        parts.append("</g>")

    if title:
        parts.append(
            f'<text x="{PAD}" y="{PAD - 5}" font-family="sans-serif" font-size="12">'
            f"{escape(title)}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

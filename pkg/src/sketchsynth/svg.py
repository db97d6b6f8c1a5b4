"""SVG export of stroke sketches, one polyline per pen-down stroke."""

from __future__ import annotations

import colorsys

from .strokes import StrokeSequence, absolute_strokes

__all__ = ["export_svg", "stroke_color"]


def stroke_color(index: int, total: int) -> str:
    """Hex color for stroke ``index``; hue sweeps the wheel over drawing order."""
    hue = index / max(total, 1)
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.75)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def export_svg(seq: StrokeSequence, temporal_coloring: bool = False,
               size: int = 256, stroke_width: float = 2.0) -> str:
    """Render to an SVG 1.1 document string.

    The sketch is fitted into a square canvas with 5% padding.  With
    temporal coloring on, each stroke gets a distinct hue by drawing order;
    otherwise all strokes are black.
    """
    strokes = absolute_strokes(seq)
    pad = 0.05 * size
    if strokes:
        xs = [p[0] for s in strokes for p in s]
        ys = [p[1] for s in strokes for p in s]
        min_x, max_x = min(xs), max(xs)
        min_y, max_y = min(ys), max(ys)
        extent = max(max_x - min_x, max_y - min_y)
        scale = (size - 2 * pad) / extent if extent > 0 else 1.0
        cx, cy = (min_x + max_x) / 2.0, (min_y + max_y) / 2.0
    else:
        scale, cx, cy = 1.0, 0.0, 0.0

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
    ]
    for i, stroke in enumerate(strokes):
        pts = " ".join(
            f"{(p[0] - cx) * scale + size / 2:.3f},{(p[1] - cy) * scale + size / 2:.3f}"
            for p in stroke)
        color = stroke_color(i, len(strokes)) if temporal_coloring else "#000000"
        lines.append(
            f'  <polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{stroke_width}" stroke-linecap="round" '
            f'stroke-linejoin="round"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"

"""Rasterization of stroke sketches and simple image file i/o.

Drawing is pure integer Bresenham with half-up rounding of endpoint
coordinates, so identical inputs always yield bit-identical images and a
scanline oracle can predict every pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .strokes import StrokeSequence, absolute_strokes

__all__ = ["RasterImage", "rasterize", "bounding_box", "save_image", "load_image"]


@dataclass(frozen=True, eq=False)
class RasterImage:
    """(H, W, C) float64 image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))
        if self.data.ndim != 3:
            raise ValueError(f"expected an (H, W, C) array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite pixel values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))

    @classmethod
    def from_chw(cls, arr: np.ndarray) -> "RasterImage":
        return cls(np.asarray(arr).transpose(1, 2, 0))

    def equals(self, other: "RasterImage") -> bool:
        return np.array_equal(self.data, other.data)


def bounding_box(strokes) -> tuple[float, float, float, float] | None:
    """(min_x, min_y, max_x, max_y) over drawn segments, None if no ink."""
    drawn = [s for s in strokes if len(s) > 1]
    if not drawn:
        return None
    pts = np.concatenate(drawn, axis=0)
    return float(pts[:, 0].min()), float(pts[:, 1].min()), \
        float(pts[:, 0].max()), float(pts[:, 1].max())


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _bresenham(x0: int, y0: int, x1: int, y1: int):
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize(seq: StrokeSequence, side: int, line_width: int = 1) -> RasterImage:
    """Draw pen-down segments into a side x side binary image.

    The ink bounding box is centered and scaled to fit inside a 10% margin;
    a sketch without drawn segments yields an all-zero image.
    """
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    grid = np.zeros((side, side))
    strokes = [s for s in absolute_strokes(seq) if len(s) > 1]
    box = bounding_box(strokes)
    if box is None:
        return RasterImage(grid[:, :, None])
    min_x, min_y, max_x, max_y = box
    extent = max(max_x - min_x, max_y - min_y)
    scale = (0.8 * side) / extent if extent > 0 else 1.0
    cx, cy = (min_x + max_x) / 2.0, (min_y + max_y) / 2.0
    half = (side - 1) / 2.0

    radius = max(line_width, 1) // 2
    for stroke in strokes:
        px = [(_round_half_up((p[0] - cx) * scale + half),
               _round_half_up((p[1] - cy) * scale + half)) for p in stroke]
        for (x0, y0), (x1, y1) in zip(px, px[1:]):
            for x, y in _bresenham(x0, y0, x1, y1):
                lo_y, hi_y = max(y - radius, 0), min(y + radius, side - 1)
                lo_x, hi_x = max(x - radius, 0), min(x + radius, side - 1)
                if lo_y <= hi_y and lo_x <= hi_x:
                    grid[lo_y:hi_y + 1, lo_x:hi_x + 1] = 1.0
    return RasterImage(grid[:, :, None])


def save_image(path, image: RasterImage) -> None:
    """Write a PGM (single channel) or PNG file with 8-bit quantization."""
    path = Path(path)
    levels = np.clip(np.floor(image.data * 255.0 + 0.5), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        if image.channels != 1:
            raise ValueError("PGM supports a single channel")
        with open(path, "wb") as f:
            f.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
            f.write(levels[:, :, 0].tobytes())
    elif path.suffix.lower() == ".png":
        from PIL import Image
        arr = levels[:, :, 0] if image.channels == 1 else levels
        Image.fromarray(arr).save(path)
    else:
        raise ValueError(f"unsupported image suffix: {path.suffix}")


def load_image(path) -> RasterImage:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        raw = path.read_bytes()
        parts = raw.split(maxsplit=4)
        if parts[0] != b"P5":
            raise ValueError(f"{path}: only binary P5 PGM is supported")
        width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
        pixels = np.frombuffer(parts[4][:width * height], dtype=np.uint8)
        data = pixels.reshape(height, width).astype(np.float64) / maxval
        return RasterImage(data[:, :, None])
    if path.suffix.lower() == ".png":
        from PIL import Image
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        return RasterImage(arr[:, :, None])
    raise ValueError(f"unsupported image suffix: {path.suffix}")

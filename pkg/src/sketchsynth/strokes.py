"""Stroke-5 vector sketches: parsing, simplification, padding.

A sketch is a sequence of (dx, dy, p1, p2, p3) rows.  Offsets are relative
to the previous pen position (the first row moves the pen from the origin).
The one-hot pen state of a row says what the pen does after arriving there:
p1 keeps it down (the next offset draws ink), p2 lifts it (the next offset
is a travel move starting a new stroke), p3 ends the sketch.  Parsing
appends one (0,0,0,0,1) terminator row after the last real point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Point5", "StrokeSequence", "StrokeError",
    "parse_quickdraw_line", "to_drawing", "absolute_strokes",
    "from_absolute_strokes", "rdp_simplify", "drop_short_strokes",
    "pad_to_max",
]

PADDING_ROW = (0.0, 0.0, 0.0, 0.0, 1.0)


class StrokeError(ValueError):
    pass


@dataclass(frozen=True)
class Point5:
    dx: float
    dy: float
    p1: int
    p2: int
    p3: int

    def __post_init__(self):
        if (self.p1, self.p2, self.p3).count(1) != 1 or \
                {self.p1, self.p2, self.p3} - {0, 1}:
            raise StrokeError(f"pen state ({self.p1},{self.p2},{self.p3}) is not one-hot")
        if not (math.isfinite(self.dx) and math.isfinite(self.dy)):
            raise StrokeError("non-finite offset")


@dataclass(frozen=True, eq=False)
class StrokeSequence:
    """(n_max, 5) float array plus the count of real (non-padding) rows."""

    array: np.ndarray
    n_s: int

    def __post_init__(self):
        object.__setattr__(self, "array", np.ascontiguousarray(self.array, dtype=np.float64))
        self.validate()

    @property
    def n_max(self) -> int:
        return self.array.shape[0]

    @property
    def points(self) -> list[Point5]:
        return [Point5(r[0], r[1], int(r[2]), int(r[3]), int(r[4])) for r in self.array]

    @classmethod
    def from_points(cls, points, n_s: int | None = None) -> "StrokeSequence":
        rows = [(p.dx, p.dy, p.p1, p.p2, p.p3) for p in points]
        arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), 5)
        if n_s is None:
            pads = 0
            for row in arr[::-1]:
                if tuple(row) == PADDING_ROW:
                    pads += 1
                else:
                    break
            n_s = len(rows) - pads
        return cls(arr, n_s)

    def validate(self) -> None:
        arr = self.array
        if arr.ndim != 2 or arr.shape[1] != 5:
            raise StrokeError(f"expected an (n, 5) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise StrokeError("non-finite offsets")
        pens = arr[:, 2:]
        if not (np.all((pens == 0) | (pens == 1)) and np.all(pens.sum(axis=1) == 1)):
            raise StrokeError("pen states must be one-hot")
        if not 0 <= self.n_s <= self.n_max:
            raise StrokeError(f"n_s={self.n_s} out of range for n_max={self.n_max}")
        ends = np.flatnonzero(arr[:, 4] == 1)
        if ends.size:
            first = int(ends[0])
            if first < self.n_s - 1:
                raise StrokeError(f"end-of-sketch at index {first} before n_s-1={self.n_s - 1}")
            if not np.all(arr[first:, 4] == 1):
                raise StrokeError("pen-down/pen-lift row after end-of-sketch")
        tail = arr[self.n_s:]
        if tail.size and not np.all(tail == np.asarray(PADDING_ROW)):
            raise StrokeError("rows beyond n_s must be (0,0,0,0,1) padding")

    def equals(self, other: "StrokeSequence") -> bool:
        return self.n_s == other.n_s and np.array_equal(self.array, other.array)


def parse_quickdraw_line(line: str, line_number: int | None = None) -> StrokeSequence:
    """Parse one ndjson record with a "drawing" array of [xs, ys] strokes."""
    where = f"line {line_number}: " if line_number is not None else ""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise StrokeError(f"{where}malformed JSON: {e}") from e
    drawing = record.get("drawing") if isinstance(record, dict) else None
    if drawing is None:
        raise StrokeError(f"{where}record has no \"drawing\" array")
    if not drawing:
        raise StrokeError(f"{where}empty drawing")
    strokes = []
    for k, stroke in enumerate(drawing):
        if len(stroke) < 2 or len(stroke[0]) != len(stroke[1]) or not stroke[0]:
            raise StrokeError(f"{where}stroke {k} is not a non-empty [xs, ys] pair")
        strokes.append(np.column_stack([stroke[0], stroke[1]]).astype(np.float64))
    return from_absolute_strokes(strokes)


def from_absolute_strokes(strokes: list[np.ndarray]) -> StrokeSequence:
    """Build a stroke-5 sequence (terminator row included) from absolute
    polylines, each an (m, 2) array."""
    rows = []
    prev = np.zeros(2)
    for stroke in strokes:
        stroke = np.asarray(stroke, dtype=np.float64).reshape(-1, 2)
        for j, pt in enumerate(stroke):
            last = j == len(stroke) - 1
            rows.append((pt[0] - prev[0], pt[1] - prev[1], 0 if last else 1, 1 if last else 0, 0))
            prev = pt
    n_s = len(rows)
    rows.append(PADDING_ROW)
    return StrokeSequence(np.asarray(rows, dtype=np.float64), n_s)


def absolute_strokes(seq: StrokeSequence) -> list[np.ndarray]:
    """Recover absolute polylines, one (m, 2) array per stroke."""
    strokes: list[list] = []
    pos = np.zeros(2)
    pen_down = False
    for row in seq.array[:seq.n_s]:
        pos = pos + row[:2]
        if pen_down and strokes:
            strokes[-1].append(pos.copy())
        elif row[4] != 1:
            strokes.append([pos.copy()])
        if row[4] == 1:
            break
        pen_down = row[2] == 1
    return [np.asarray(s) for s in strokes]


def to_drawing(seq: StrokeSequence) -> list[list[list[float]]]:
    """Serialize back to the QuickDraw [xs, ys] stroke-list format."""
    return [[list(s[:, 0]), list(s[:, 1])] for s in absolute_strokes(seq)]


def _perpendicular_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    chord = b - a
    norm = math.hypot(chord[0], chord[1])
    if norm == 0.0:
        return np.hypot(points[:, 0] - a[0], points[:, 1] - a[1])
    cross = chord[0] * (a[1] - points[:, 1]) - chord[1] * (a[0] - points[:, 0])
    return np.abs(cross) / norm


def _rdp_polyline(points: np.ndarray, epsilon: float) -> np.ndarray:
    if len(points) < 3:
        return points
    keep = np.zeros(len(points), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(points) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _perpendicular_distances(points[lo + 1:hi], points[lo], points[hi])
        idx = int(np.argmax(d))
        if d[idx] > epsilon:
            mid = lo + 1 + idx
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return points[keep]


def rdp_simplify(seq: StrokeSequence, epsilon: float) -> StrokeSequence:
    """Simplify each stroke independently with Ramer-Douglas-Peucker.

    Stroke boundaries (and so pen states) are preserved; endpoints always
    survive.  epsilon 0 keeps every point.
    """
    if epsilon < 0:
        raise StrokeError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return seq
    simplified = [_rdp_polyline(s, epsilon) for s in absolute_strokes(seq)]
    return from_absolute_strokes(simplified)


def drop_short_strokes(seq: StrokeSequence, min_arc_length: float) -> StrokeSequence:
    """Remove strokes whose polyline arc length falls below the threshold."""
    kept = []
    for stroke in absolute_strokes(seq):
        arc = float(np.sum(np.hypot(*np.diff(stroke, axis=0).T))) if len(stroke) > 1 else 0.0
        if arc >= min_arc_length:
            kept.append(stroke)
    return from_absolute_strokes(kept)


def pad_to_max(seq: StrokeSequence, n_max: int) -> StrokeSequence:
    """Pad (or trim pure padding) to exactly n_max rows of (0,0,0,0,1)."""
    if seq.n_s > n_max:
        raise StrokeError(f"sequence too long: n_s={seq.n_s} > n_max={n_max}")
    arr = np.tile(np.asarray(PADDING_ROW), (n_max, 1))
    arr[:seq.n_s] = seq.array[:seq.n_s]
    return StrokeSequence(arr, seq.n_s)

"""Photo-sketch pairs, dataset splits, offset normalization and disk i/o.

On disk a split is a directory holding pairs.jsonl (one pair per line, the
sketch inline as 5-tuples, the photo as a relative image path), the photo
files, and manifest.json recording offset_std and n_max.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .raster import RasterImage, load_image, rasterize, save_image
from .strokes import StrokeSequence, pad_to_max

__all__ = [
    "PhotoSketchPair", "DatasetSplit", "DatasetError",
    "normalize_offsets", "scale_offsets", "offset_std",
    "make_vector_raster_pair", "save_split", "load_split", "make_batch",
]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PhotoSketchPair:
    id: str
    photo: RasterImage
    sketch: StrokeSequence


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    pairs: list[PhotoSketchPair]
    offset_std: float = 1.0

    def __post_init__(self):
        ids = [p.id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise DatasetError("pair ids must be unique within a split")
        if not (self.offset_std > 0):
            raise DatasetError(f"offset_std must be positive, got {self.offset_std}")


def offset_std(pairs: list[PhotoSketchPair]) -> float:
    """Population std of all real (dx, dy) values pooled across the pairs."""
    values = [p.sketch.array[:p.sketch.n_s, :2].ravel() for p in pairs]
    pooled = np.concatenate(values) if values else np.empty(0)
    if pooled.size == 0:
        raise DatasetError("degenerate dataset: no offsets")
    std = float(pooled.std())
    if std == 0.0:
        raise DatasetError("degenerate dataset: zero offset std")
    return std


def scale_offsets(pairs: list[PhotoSketchPair], std: float) -> list[PhotoSketchPair]:
    scaled = []
    for p in pairs:
        arr = p.sketch.array.copy()
        arr[:, :2] /= std
        scaled.append(replace(p, sketch=StrokeSequence(arr, p.sketch.n_s)))
    return scaled


def normalize_offsets(split: DatasetSplit) -> DatasetSplit:
    """Divide every offset by the split's pooled offset std (training split
    only; apply the recorded std to other splits via scale_offsets)."""
    if not split.pairs:
        raise DatasetError("cannot normalize an empty split")
    std = offset_std(split.pairs)
    return DatasetSplit(scale_offsets(split.pairs, std), offset_std=std)


def make_vector_raster_pair(seq: StrokeSequence, side: int,
                            pair_id: str = "pair", line_width: int = 1) -> PhotoSketchPair:
    """Pair a vector sketch with its own rasterization (pretraining data)."""
    return PhotoSketchPair(id=pair_id, photo=rasterize(seq, side, line_width), sketch=seq)


def save_split(directory, split: DatasetSplit, n_max: int,
               image_format: str = "pgm") -> None:
    directory = Path(directory)
    (directory / "photos").mkdir(parents=True, exist_ok=True)
    with open(directory / "pairs.jsonl", "w", encoding="utf-8") as f:
        for pair in split.pairs:
            rel = f"photos/{pair.id}.{image_format}"
            save_image(directory / rel, pair.photo)
            record = {
                "id": pair.id,
                "photo": rel,
                "sketch": pair.sketch.array[:pair.sketch.n_s + 1].tolist()
                if pair.sketch.n_max > pair.sketch.n_s
                else pair.sketch.array.tolist(),
                "n_s": pair.sketch.n_s,
            }
            f.write(json.dumps(record) + "\n")
    manifest = {"offset_std": split.offset_std, "n_max": n_max,
                "count": len(split.pairs)}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_split(directory) -> tuple[DatasetSplit, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    pairs = []
    with open(directory / "pairs.jsonl", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"pairs.jsonl line {line_no}: malformed JSON: {e}") from e
            sketch = StrokeSequence(np.asarray(record["sketch"]), int(record["n_s"]))
            photo = load_image(directory / record["photo"])
            pairs.append(PhotoSketchPair(id=record["id"], photo=photo, sketch=sketch))
    return DatasetSplit(pairs, offset_std=manifest.get("offset_std", 1.0)), manifest


def make_batch(pairs: list[PhotoSketchPair], n_max: int,
               indices=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack pairs into model inputs.

    Returns photos (B, C, H, W), sketches (n_max, B, 5) padded, and the
    per-example real lengths (B,).
    """
    chosen = pairs if indices is None else [pairs[i] for i in indices]
    if not chosen:
        raise DatasetError("empty batch")
    photos = np.stack([p.photo.to_chw() for p in chosen])
    sketches = np.stack([pad_to_max(p.sketch, n_max).array for p in chosen], axis=1)
    lengths = np.asarray([p.sketch.n_s for p in chosen], dtype=np.int64)
    return photos, sketches, lengths

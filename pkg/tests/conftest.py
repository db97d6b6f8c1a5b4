import numpy as np
import pytest

from sketchsynth.datasets import PhotoSketchPair, normalize_offsets, DatasetSplit
from sketchsynth.evalkit import make_shape_sketch
from sketchsynth.model import ModelConfig, build_model
from sketchsynth.raster import rasterize
from sketchsynth.strokes import StrokeSequence, from_absolute_strokes, pad_to_max

# small enough that exhaustive finite differences stay fast; side 48 keeps
# every instance-norm plane larger than 1x1 so no layer degenerates
MICRO_CONFIG = ModelConfig(
    image_side=48, image_channels=1, latent_dim=3,
    conv_channels=(1, 1, 2, 2, 2), fc_hidden=4,
    enc_hidden=4, dec_hidden=6, mixtures=2, max_seq_len=4)

# big enough to learn the toy tasks, still fast; side 40 (trail ending at
# a 2x2 plane) keeps the photo encoder's instance norms non-degenerate
SMALL_CONFIG = ModelConfig(
    image_side=40, image_channels=1, latent_dim=8,
    conv_channels=(4, 6, 8, 10, 12), fc_hidden=16,
    enc_hidden=16, dec_hidden=32, mixtures=5, max_seq_len=24)


def random_sketch(rng, n_points: int, n_strokes: int = 2) -> StrokeSequence:
    """A small random vector sketch with the requested number of real points."""
    pts = np.cumsum(rng.normal(scale=1.0, size=(n_points, 2)), axis=0)
    cuts = sorted(rng.choice(np.arange(1, n_points), size=min(n_strokes - 1, n_points - 1),
                             replace=False).tolist()) if n_strokes > 1 and n_points > 1 else []
    strokes = np.split(pts, cuts) if cuts else [pts]
    return from_absolute_strokes([s for s in strokes if len(s)])


def micro_pairs(rng, n, config: ModelConfig):
    """Tiny random vector-raster pairs that fit a micro n_max, with photos
    guaranteed distinct so pairing-sensitivity tests are meaningful."""
    pairs = []
    seen = set()
    while len(pairs) < n:
        sketch = random_sketch(rng, config.max_seq_len - 1, n_strokes=1)
        photo = rasterize(sketch, config.image_side)
        key = photo.data.tobytes()
        if key in seen:
            continue
        seen.add(key)
        pairs.append(PhotoSketchPair(
            id=f"m{len(pairs):02d}", photo=photo,
            sketch=pad_to_max(sketch, config.max_seq_len)))
    return pairs


def toy_pairs(rng, n, config: ModelConfig):
    """Vector-raster pairs over procedural shapes, offsets normalized and
    sketches trimmed to fit the configured n_max."""
    kinds = ("ellipse", "rectangle", "zigzag")
    pairs = []
    i = 0
    while len(pairs) < n:
        kind = kinds[i % len(kinds)]
        sketch = make_shape_sketch(kind, rng)
        i += 1
        if sketch.n_max > config.max_seq_len:
            continue
        pairs.append(PhotoSketchPair(
            id=f"p{len(pairs):04d}",
            photo=rasterize(sketch, config.image_side),
            sketch=sketch))
    split = normalize_offsets(DatasetSplit(pairs))
    return [
        PhotoSketchPair(id=p.id, photo=p.photo,
                        sketch=pad_to_max(p.sketch, config.max_seq_len))
        for p in split.pairs
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def micro_model():
    return build_model(MICRO_CONFIG, np.random.default_rng(1))


@pytest.fixture
def small_model():
    return build_model(SMALL_CONFIG, np.random.default_rng(2))

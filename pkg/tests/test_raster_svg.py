import numpy as np
import pytest

from sketchsynth.raster import RasterImage, load_image, rasterize, save_image
from sketchsynth.strokes import StrokeSequence, from_absolute_strokes
from sketchsynth.svg import export_svg, stroke_color


def scanline_row_oracle(x0, x1, side, scale_extent):
    """Oracle for one horizontal stroke: predicted pixel columns."""
    scale = 0.8 * side / scale_extent
    half = (side - 1) / 2.0
    cx = (x0 + x1) / 2.0
    c0 = int(np.floor((x0 - cx) * scale + half + 0.5))
    c1 = int(np.floor((x1 - cx) * scale + half + 0.5))
    row = int(np.floor(0.0 + half + 0.5))
    return row, min(c0, c1), max(c0, c1)


def test_raster_empty_sketch_blank():
    seq = StrokeSequence(np.asarray([[0, 0, 0, 0, 1.0]]), 0)
    img = rasterize(seq, 8)
    np.testing.assert_array_equal(img.data, np.zeros((8, 8, 1)))


def test_raster_single_point_stroke_blank():
    # a one-point stroke draws no segment
    seq = from_absolute_strokes([np.asarray([[3.0, 4.0]])])
    np.testing.assert_array_equal(rasterize(seq, 8).data, np.zeros((8, 8, 1)))


def test_raster_horizontal_stroke_matches_scanline_oracle():
    seq = from_absolute_strokes([np.asarray([[0.0, 0.0], [10.0, 0.0]])])
    img = rasterize(seq, 16, line_width=1)
    row, c0, c1 = scanline_row_oracle(0.0, 10.0, 16, 10.0)
    expected = np.zeros((16, 16, 1))
    expected[row, c0:c1 + 1, 0] = 1.0
    np.testing.assert_array_equal(img.data, expected)
    assert img.data.sum() == c1 - c0 + 1  # exactly one row segment


def test_raster_values_binary(rng):
    strokes = [np.cumsum(rng.normal(size=(6, 2)), axis=0) for _ in range(3)]
    img = rasterize(from_absolute_strokes(strokes), 24)
    assert set(np.unique(img.data)).issubset({0.0, 1.0})


def test_raster_deterministic(rng):
    strokes = [np.cumsum(rng.normal(size=(8, 2)), axis=0) for _ in range(2)]
    seq = from_absolute_strokes(strokes)
    a = rasterize(seq, 32)
    b = rasterize(seq, 32)
    assert a.equals(b)


def test_raster_margin_and_extent(rng):
    seq = from_absolute_strokes([np.asarray([[0.0, 0.0], [100.0, 0.0]])])
    img = rasterize(seq, 100)
    cols = np.flatnonzero(img.data.sum(axis=(0, 2)))
    # 10% margin on each side: ink spans ~80% of the width, centered
    assert cols.min() >= 5 and cols.max() <= 94
    assert cols.max() - cols.min() >= 75


def test_raster_line_width():
    seq = from_absolute_strokes([np.asarray([[0.0, 0.0], [10.0, 0.0]])])
    thin = rasterize(seq, 16, line_width=1).data.sum()
    thick = rasterize(seq, 16, line_width=3).data.sum()
    assert thick > thin


def test_raster_side_validation():
    seq = from_absolute_strokes([np.zeros((2, 2))])
    with pytest.raises(ValueError):
        rasterize(seq, 0)


def test_raster_image_validation():
    with pytest.raises(ValueError):
        RasterImage(np.full((2, 2, 1), 1.5))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((2, 2)))


def test_pgm_roundtrip_binary_exact(tmp_path, rng):
    img = rasterize(from_absolute_strokes(
        [np.cumsum(rng.normal(size=(6, 2)), axis=0)]), 16)
    save_image(tmp_path / "img.pgm", img)
    loaded = load_image(tmp_path / "img.pgm")
    assert loaded.equals(img)


def test_png_roundtrip_binary_exact(tmp_path, rng):
    img = rasterize(from_absolute_strokes(
        [np.cumsum(rng.normal(size=(6, 2)), axis=0)]), 16)
    save_image(tmp_path / "img.png", img)
    assert load_image(tmp_path / "img.png").equals(img)


# ---------------------------------------------------------------------------
# svg
# ---------------------------------------------------------------------------

def test_svg_polyline_count_matches_strokes(rng):
    strokes = [np.cumsum(rng.normal(size=(4, 2)), axis=0) for _ in range(2)]
    doc = export_svg(from_absolute_strokes(strokes))
    assert doc.count("<polyline") == 2
    assert doc.startswith("<?xml")
    assert "</svg>" in doc


def test_svg_empty_sketch_valid_no_polylines():
    seq = StrokeSequence(np.asarray([[0, 0, 0, 0, 1.0]]), 0)
    doc = export_svg(seq)
    assert doc.count("<polyline") == 0
    assert "<svg" in doc and "</svg>" in doc


def test_svg_temporal_coloring_distinct(rng):
    strokes = [np.cumsum(rng.normal(size=(3, 2)), axis=0) for _ in range(3)]
    doc = export_svg(from_absolute_strokes(strokes), temporal_coloring=True)
    colors = [line.split('stroke="')[1].split('"')[0]
              for line in doc.splitlines() if "<polyline" in line]
    assert len(colors) == 3 and len(set(colors)) == 3


def test_svg_monochrome_without_coloring(rng):
    strokes = [np.cumsum(rng.normal(size=(3, 2)), axis=0) for _ in range(3)]
    doc = export_svg(from_absolute_strokes(strokes), temporal_coloring=False)
    assert doc.count('stroke="#000000"') == 3


def test_stroke_color_deterministic():
    assert stroke_color(0, 3) == stroke_color(0, 3)
    assert stroke_color(0, 3) != stroke_color(1, 3)

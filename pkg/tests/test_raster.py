import json
import math

import numpy as np
import pytest

from fontpair import raster
from fontpair.errors import FontRejected, MissingGlyph, UnparseableFont, UnreadableFile
from fontpair.testing import GlyphStyle, make_font


def square(x0, y0, x1, y1, ccw=True):
    pts = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], float)
    return pts if ccw else pts[::-1]


class TestFill:
    def test_axis_aligned_square_is_exact(self):
        cov = raster.fill_polygons([square(2, 3, 6, 8)], 10)
        expected = np.zeros((10, 10))
        expected[3:8, 2:6] = 1
        np.testing.assert_array_equal(cov, expected)

    def test_half_pixel_edges(self):
        cov = raster.fill_polygons([square(2.5, 0, 4, 1)], 8)
        np.testing.assert_allclose(cov[0, 2:4], [0.5, 1.0])
        assert cov.sum() == pytest.approx(1.5)

    def test_opposite_winding_cuts_a_hole(self):
        cov = raster.fill_polygons([square(0, 0, 10, 10), square(3, 3, 7, 7, ccw=False)], 10)
        assert cov.sum() == 100 - 16
        assert cov[5, 5] == 0

    def test_same_winding_overlap_is_union(self):
        cov = raster.fill_polygons([square(0, 0, 6, 6), square(3, 3, 9, 9)], 10)
        assert cov.sum() == 36 + 36 - 9

    def test_triangle_area(self):
        tri = np.array([(0, 0), (16, 0), (0, 16)], float)
        cov = raster.fill_polygons([tri], 16, ss=16)
        assert cov.sum() == pytest.approx(128, abs=1.0)


@pytest.fixture(scope="module")
def plain_font(tmp_path_factory):
    path = make_font(tmp_path_factory.mktemp("f") / "plain.ttf", GlyphStyle(weight=0.12))
    return raster.load_font(path)


class TestGlyph:
    def test_binary_image_inside_margin(self, plain_font):
        g = raster.rasterize_glyph(plain_font, "H", 100)
        assert g.pixels.shape == (100, 100) and g.pixels.dtype == np.uint8
        assert set(np.unique(g.pixels)) <= {0, 1}
        m = raster.margin_for(100)
        assert m == 5
        ys, xs = np.nonzero(g.pixels)
        assert ys.min() >= m and xs.min() >= m
        assert ys.max() < 100 - m and xs.max() < 100 - m

    def test_long_side_fills_the_box_and_is_centred(self, plain_font):
        for ch in "AIOW":
            px = raster.rasterize_glyph(plain_font, ch, 100).pixels
            ys, xs = np.nonzero(px)
            h, w = ys.max() - ys.min() + 1, xs.max() - xs.min() + 1
            assert max(h, w) >= 89
            assert abs((ys.min() + ys.max()) / 2 - 49.5) <= 1
            assert abs((xs.min() + xs.max()) / 2 - 49.5) <= 1

    def test_deterministic(self, plain_font):
        a = raster.rasterize_glyph(plain_font, "S", 64).pixels
        b = raster.rasterize_glyph(plain_font, "S", 64).pixels
        np.testing.assert_array_equal(a, b)

    def test_bad_arguments(self, plain_font):
        with pytest.raises(ValueError):
            raster.rasterize_glyph(plain_font, "a")
        with pytest.raises(ValueError):
            raster.rasterize_glyph(plain_font, "A", 8)

    def test_real_font_if_available(self):
        path = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"
        try:
            rec = raster.load_font(path)
        except UnreadableFile:
            pytest.skip("DejaVuSans not installed")
        f = raster.rasterize_font(rec, 100)
        assert len(f.glyphs) == 26
        assert 0.05 < f.ink_fraction < 0.4


class TestFontErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFile):
            raster.load_font(tmp_path / "nope.ttf")

    def test_garbage(self, tmp_path):
        p = tmp_path / "junk.ttf"
        p.write_bytes(b"\0\1\0\0garbage" * 20)
        with pytest.raises(UnparseableFont) as info:
            raster.load_font(p)
        assert info.value.code == "raster.UnparseableFont"

    def test_missing_and_empty_glyphs(self, tmp_path):
        rec = raster.load_font(make_font(tmp_path / "holes.ttf", missing="J", empty="Q"))
        with pytest.raises(MissingGlyph):
            raster.rasterize_glyph(rec, "J")
        with pytest.raises(MissingGlyph):
            raster.rasterize_glyph(rec, "Q")
        with pytest.raises(FontRejected) as info:
            raster.rasterize_font(rec)
        assert info.value.letters == ["J", "Q"]


def test_font_id_for(tmp_path):
    assert raster.font_id_for(tmp_path / "serif" / "x.ttf", tmp_path) == "serif__x.ttf"
    assert raster.font_id_for("/a/b/c.otf") == "c.otf"


def test_filter_fonts(tmp_path):
    ok = raster.rasterize_font(raster.load_font(make_font(tmp_path / "ok.ttf")), 32)
    solid = raster.rasterize_font(raster.load_font(make_font(tmp_path / "solid.ttf", solid=raster.LETTERS)), 32)
    kept, dropped = raster.filter_fonts([ok, solid], exclusion_list=[], ink_bounds=(0.01, 0.6))
    assert [f.font_id for f in kept] == ["ok.ttf"]
    assert dropped[0]["reason"] == "ink_fraction"
    kept, dropped = raster.filter_fonts([ok], exclusion_list=["ok.ttf"])
    assert kept == [] and dropped == [{"font_id": "ok.ttf", "reason": "manual"}]
    with pytest.raises(ValueError):
        raster.filter_fonts([ok], ink_bounds=(0.5, 0.2))


def test_png_round_trip(tmp_path):
    px = (np.random.default_rng(0).random((20, 20)) < 0.3).astype(np.uint8)
    raster.glyph_to_png(px, tmp_path / "g.png")
    np.testing.assert_array_equal(raster.png_to_glyph(tmp_path / "g.png"), px)


def test_build_dataset(tmp_path):
    src = tmp_path / "fonts"
    make_font(src / "a" / "one.ttf")
    make_font(src / "b" / "two.ttf", GlyphStyle(weight=0.05, serif=2.0))
    make_font(src / "three.ttf", missing="Z")
    (src / "broken.otf").write_bytes(b"nonsense")
    (src / "notes.txt").write_text("not a font")
    ds = raster.build_dataset(src, tmp_path / "ds", size=24)
    assert ds.font_ids == ["a__one.ttf", "b__two.ttf"]
    assert (tmp_path / "ds" / "a__one.ttf" / "K.png").exists()
    assert ds.image("b__two.ttf", "K").shape == (24, 24)
    rejected = [json.loads(line) for line in open(tmp_path / "ds" / "rejected.jsonl")]
    reasons = {r["font_id"]: r["reason"] for r in rejected}
    assert reasons == {"broken.otf": "raster.UnparseableFont", "three.ttf": "missing_glyph"}
    rec = ds.records["a__one.ttf"]
    assert len(rec["sha256"]) == 64 and set(rec["glyphs"]) == set(raster.LETTERS)
    assert math.isclose(rec["ink_fraction"],
                        np.mean([ds.image("a__one.ttf", c).mean() for c in raster.LETTERS]), abs_tol=1e-6)

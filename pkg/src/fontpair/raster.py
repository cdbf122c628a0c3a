"""Font loading, glyph rasterization and corpus filtering.

Glyph outlines are read with fontTools, flattened to polygons and scan
converted here with a nonzero-winding supersampling rasterizer, so the output
does not depend on the hinting engine of whatever FreeType build is around.
"""

import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from fontTools.pens.basePen import BasePen
from fontTools.ttLib import TTFont
from PIL import Image

from .errors import FontRejected, MissingGlyph, UnparseableFont, UnreadableFile

log = logging.getLogger(__name__)
logging.getLogger("fontTools").setLevel(logging.ERROR)

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
FONT_SUFFIXES = (".ttf", ".otf", ".ttc", ".woff", ".woff2")
SUPERSAMPLE = 8
CURVE_STEPS = 16


@dataclass(frozen=True)
class FontRecord:
    font_id: str
    file_path: str
    family_tag: str | None = None
    sha256: str | None = None


@dataclass
class GlyphImage:
    pixels: np.ndarray  # uint8, 1 = ink
    char_class: str
    font_id: str

    @property
    def ink_fraction(self):
        return float(self.pixels.mean())


@dataclass
class RasterizedFont:
    record: FontRecord
    glyphs: dict = field(default_factory=dict)

    @property
    def font_id(self):
        return self.record.font_id

    @property
    def ink_fraction(self):
        return float(np.mean([g.ink_fraction for g in self.glyphs.values()]))


def font_id_for(path, root=None):
    """Relative path (to ``root``, or the file name) with separators as ``__``."""
    path = Path(path)
    rel = os.path.relpath(path, root) if root is not None else path.name
    return rel.replace(os.sep, "__").replace("/", "__")


@lru_cache(maxsize=16)
def _parse(path, mtime_ns):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    try:
        font = TTFont(io.BytesIO(data), lazy=False, fontNumber=0)
        font["head"]
        cmap = font.getBestCmap()
        if cmap is None:
            raise ValueError("no unicode cmap")
        if "glyf" not in font and "CFF " not in font and "CFF2" not in font:
            raise ValueError("no scalable outlines")
        glyph_set = font.getGlyphSet()
    except Exception as exc:  # fontTools raises a zoo of types on corrupt input
        raise UnparseableFont(f"{path}: {exc}") from exc
    return font, cmap, glyph_set, hashlib.sha256(data).hexdigest()


def _open(path):
    try:
        mtime = os.stat(path).st_mtime_ns
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    return _parse(str(path), mtime)


def load_font(path, root=None, family_tag=None):
    """Validate a scalable font file and return its record."""
    _, _, _, digest = _open(path)
    return FontRecord(font_id_for(path, root), str(path), family_tag, digest)


class _FlattenPen(BasePen):
    """Collects closed polygons, subdividing curves into fixed steps."""

    def __init__(self, glyph_set):
        super().__init__(glyph_set)
        self.contours = []
        self._cur = []

    def _moveTo(self, pt):
        self._flush()
        self._cur = [pt]

    def _lineTo(self, pt):
        self._cur.append(pt)

    def _curveToOne(self, p1, p2, p3):
        p0 = self._cur[-1]
        t = np.linspace(0, 1, CURVE_STEPS + 1)[1:, None]
        pts = ((1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * np.asarray(p1)
               + 3 * (1 - t) * t ** 2 * np.asarray(p2) + t ** 3 * np.asarray(p3))
        self._cur.extend(map(tuple, pts))

    def _qCurveToOne(self, p1, p2):
        p0 = self._cur[-1]
        t = np.linspace(0, 1, CURVE_STEPS + 1)[1:, None]
        pts = (1 - t) ** 2 * np.asarray(p0) + 2 * (1 - t) * t * np.asarray(p1) + t ** 2 * np.asarray(p2)
        self._cur.extend(map(tuple, pts))

    def _closePath(self):
        self._flush()

    def _endPath(self):
        self._flush()

    def _flush(self):
        if len(self._cur) >= 3:
            self.contours.append(np.asarray(self._cur, dtype=np.float64))
        self._cur = []


def glyph_outline(font, char_class):
    """Flattened contours of ``char_class`` in font units (y up)."""
    _, cmap, glyph_set, _ = _open(font.file_path)
    name = cmap.get(ord(char_class))
    if name is None or name == ".notdef":
        raise MissingGlyph(f"{font.font_id}: no glyph for {char_class!r}")
    pen = _FlattenPen(glyph_set)
    glyph_set[name].draw(pen)
    if not pen.contours:
        raise MissingGlyph(f"{font.font_id}: empty outline for {char_class!r}")
    return pen.contours


def fill_polygons(contours, size, ss=SUPERSAMPLE):
    """Fractional coverage of ``size``x``size`` pixels by polygons in pixel coords.

    Nonzero winding rule, evaluated on an ``ss``x``ss`` grid of sample points
    per pixel. Edges are half-open in y so shared vertices are counted once.
    """
    n = size * ss
    edges = np.concatenate([np.stack([c, np.roll(c, -1, axis=0)], axis=1) for c in contours])
    (x0, y0), (x1, y1) = edges[:, 0].T, edges[:, 1].T
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    direction = np.where(y1 > y0, 1, -1)
    ylo, yhi = np.minimum(y0, y1) * ss - 0.5, np.maximum(y0, y1) * ss - 0.5
    # sample row r sits at y = (r + 0.5) / ss; edge covers rows with ylo <= r < yhi
    r_first = np.clip(np.ceil(ylo), 0, n).astype(np.int64)
    r_last = np.clip(np.ceil(yhi), 0, n).astype(np.int64)
    counts = r_last - r_first
    edge_idx = np.repeat(np.arange(len(counts)), counts)
    rows = np.repeat(r_first - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
    ys = (rows + 0.5) / ss
    e = edge_idx
    xc = x0[e] + (ys - y0[e]) * (x1[e] - x0[e]) / (y1[e] - y0[e])
    # first sample column strictly right of the crossing
    cols = np.clip(np.floor(xc * ss - 0.5).astype(np.int64) + 1, 0, n)
    diff = np.zeros((n, n + 1), dtype=np.int32)
    np.add.at(diff, (rows, cols), direction[e])
    inside = np.cumsum(diff[:, :n], axis=1) != 0
    return inside.reshape(size, ss, size, ss).mean(axis=(1, 3))


def margin_for(size):
    return math.ceil(0.05 * size)


def rasterize_glyph(font, char_class, size=100):
    """Render one uppercase letter as a ``size``x``size`` binary image.

    The tight outline box is scaled uniformly into the margin-inset square and
    centred; coverage of at least one half becomes ink.
    """
    if char_class not in LETTERS:
        raise ValueError(f"char_class must be one of A-Z, got {char_class!r}")
    if size < 16:
        raise ValueError("size must be >= 16")
    contours = glyph_outline(font, char_class)
    pts = np.concatenate(contours)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float(max(hi - lo))
    if extent <= 0:
        raise MissingGlyph(f"{font.font_id}: degenerate outline for {char_class!r}")
    m = margin_for(size)
    scale = (size - 2 * m) / extent
    centre = (lo + hi) / 2
    placed = []
    for c in contours:
        p = (c - centre) * scale
        placed.append(np.column_stack([p[:, 0] + size / 2, size / 2 - p[:, 1]]))
    pixels = (fill_polygons(placed, size) >= 0.5).astype(np.uint8)
    if not pixels.any():
        raise MissingGlyph(f"{font.font_id}: {char_class!r} rendered no ink at size {size}")
    return GlyphImage(pixels, char_class, font.font_id)


def rasterize_font(font, size=100):
    glyphs, missing = {}, []
    for ch in LETTERS:
        try:
            glyphs[ch] = rasterize_glyph(font, ch, size)
        except MissingGlyph:
            missing.append(ch)
    if missing:
        raise FontRejected(font.font_id, missing)
    return RasterizedFont(font, glyphs)


def filter_fonts(fonts, exclusion_list=(), ink_bounds=(0.01, 0.60)):
    """Drop manually excluded fonts and fonts with implausible mean ink.

    Returns ``(kept, dropped)``; ``dropped`` is the audit log, one dict per
    removed font with its ``reason``.
    """
    low, high = ink_bounds
    if not 0 <= low < high <= 1:
        raise ValueError(f"bad ink_bounds {ink_bounds}")
    excluded = set(exclusion_list)
    kept, dropped = [], []
    for f in fonts:
        if f.font_id in excluded:
            dropped.append({"font_id": f.font_id, "reason": "manual"})
            continue
        ink = f.ink_fraction
        if not low <= ink <= high:
            dropped.append({"font_id": f.font_id, "reason": "ink_fraction", "ink_fraction": ink})
            continue
        kept.append(f)
    for d in dropped:
        log.info("dropped %s (%s)", d["font_id"], d["reason"])
    return kept, dropped


# ---------------------------------------------------------------------------
# on-disk dataset


def glyph_to_png(pixels, path):
    """Black ink on white, 8-bit grayscale."""
    Image.fromarray(((1 - pixels) * 255).astype(np.uint8), mode="L").save(path, optimize=False)


def png_to_glyph(path):
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) < 128).astype(np.uint8)


def find_font_files(fonts_dir):
    root = Path(fonts_dir)
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in FONT_SUFFIXES)


def _rasterize_path(args):
    path, root, size = args
    try:
        rec = load_font(path, root)
        return rec, rasterize_font(rec, size), None
    except FontRejected as exc:
        return None, None, {"font_id": exc.font_id, "reason": "missing_glyph", "letters": exc.letters}
    except (UnreadableFile, UnparseableFont) as exc:
        return None, None, {"font_id": font_id_for(path, root), "reason": exc.code, "detail": str(exc)}


def build_dataset(fonts_dir, out, size=100, exclude=(), ink_bounds=(0.01, 0.60), workers=1):
    """Rasterize every font under ``fonts_dir`` into ``out``.

    Writes ``<font_id>/<LETTER>.png`` for kept fonts plus ``fonts.jsonl`` and
    ``rejected.jsonl``. Returns the loaded :class:`GlyphDataset`.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = find_font_files(fonts_dir)
    jobs = [(str(p), str(fonts_dir), size) for p in paths]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_rasterize_path, jobs, chunksize=4))
    else:
        results = [_rasterize_path(j) for j in jobs]

    rejected = [r for _, _, r in results if r is not None]
    rendered = [f for _, f, _ in results if f is not None]
    kept, dropped = filter_fonts(rendered, exclude, ink_bounds)
    rejected.extend(dropped)

    with open(out / "fonts.jsonl", "w") as fh:
        for f in sorted(kept, key=lambda f: f.font_id):
            font_dir = out / f.font_id
            font_dir.mkdir(exist_ok=True)
            glyph_paths = {}
            for ch in LETTERS:
                rel = f"{f.font_id}/{ch}.png"
                glyph_to_png(f.glyphs[ch].pixels, out / rel)
                glyph_paths[ch] = rel
            rec = {
                "font_id": f.font_id,
                "file_path": f.record.file_path,
                "sha256": f.record.sha256,
                "ink_fraction": round(f.ink_fraction, 6),
                "glyphs": glyph_paths,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "rejected.jsonl", "w") as fh:
        for r in sorted(rejected, key=lambda r: r["font_id"]):
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    log.info("kept %d fonts, rejected %d", len(kept), len(rejected))
    return GlyphDataset(out)


class GlyphDataset:
    """Read side of a built dataset directory.

    Glyph arrays are decoded lazily and cached by absolute path.
    """

    def __init__(self, root):
        self.root = Path(root)
        index = self.root / "fonts.jsonl"
        if not index.exists():
            raise FileNotFoundError(f"{index} not found; run build-dataset first")
        with open(index) as fh:
            self.records = {r["font_id"]: r for r in map(json.loads, fh)}
        self._cache = {}

    @property
    def font_ids(self):
        return sorted(self.records)

    def glyph_path(self, font_id, char_class):
        return str(self.root / self.records[font_id]["glyphs"][char_class])

    def digests(self, font_ids=None):
        ids = self.font_ids if font_ids is None else font_ids
        return {self.records[f].get("sha256") for f in ids} - {None}

    def image(self, font_id, char_class):
        return load_image(self.glyph_path(font_id, char_class), self._cache)


def load_image(path, cache=None):
    if cache is not None and path in cache:
        return cache[path]
    img = png_to_glyph(path)
    if cache is not None:
        cache[path] = img
    return img

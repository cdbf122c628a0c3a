"""Procedural TrueType fonts for tests and demos.

Every letter is a fixed stroke skeleton; a font is a *style* applied to all 26
skeletons (stroke weight, slant, width, contrast, serifs, joins). Glyphs of one
font therefore share style cues across letter shapes, which is exactly the
signal a same-font classifier has to pick up.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fontTools.fontBuilder import FontBuilder
from fontTools.pens.ttGlyphPen import TTGlyphPen

_O = [(0.3, 0), (0, 0.3), (0, 0.7), (0.3, 1), (0.7, 1), (1, 0.7), (1, 0.3), (0.7, 0), (0.3, 0)]
_P = [(0, 0), (0, 1), (0.7, 1), (1, 0.8), (1, 0.6), (0.7, 0.45), (0, 0.45)]

SKELETONS = {
    "A": [[(0, 0), (0.5, 1), (1, 0)], [(0.25, 0.45), (0.75, 0.45)]],
    "B": [[(0, 0), (0, 1), (0.7, 1), (0.9, 0.85), (0.7, 0.5), (0, 0.5)],
          [(0.7, 0.5), (1, 0.25), (0.7, 0), (0, 0)]],
    "C": [[(1, 0.85), (0.7, 1), (0.3, 1), (0, 0.7), (0, 0.3), (0.3, 0), (0.7, 0), (1, 0.15)]],
    "D": [[(0, 0), (0, 1), (0.6, 1), (1, 0.7), (1, 0.3), (0.6, 0), (0, 0)]],
    "E": [[(1, 1), (0, 1), (0, 0), (1, 0)], [(0, 0.5), (0.7, 0.5)]],
    "F": [[(1, 1), (0, 1), (0, 0)], [(0, 0.5), (0.7, 0.5)]],
    "G": [[(1, 0.85), (0.7, 1), (0.3, 1), (0, 0.7), (0, 0.3), (0.3, 0), (0.7, 0), (1, 0.3),
           (1, 0.45), (0.55, 0.45)]],
    "H": [[(0, 0), (0, 1)], [(1, 0), (1, 1)], [(0, 0.5), (1, 0.5)]],
    "I": [[(0.5, 0), (0.5, 1)], [(0.2, 1), (0.8, 1)], [(0.2, 0), (0.8, 0)]],
    "J": [[(0.3, 1), (1, 1)], [(0.8, 1), (0.8, 0.25), (0.6, 0), (0.2, 0), (0, 0.25)]],
    "K": [[(0, 0), (0, 1)], [(1, 1), (0, 0.4)], [(0.3, 0.6), (1, 0)]],
    "L": [[(0, 1), (0, 0), (1, 0)]],
    "M": [[(0, 0), (0, 1), (0.5, 0.4), (1, 1), (1, 0)]],
    "N": [[(0, 0), (0, 1), (1, 0), (1, 1)]],
    "O": [_O],
    "P": [_P],
    "Q": [_O, [(0.6, 0.3), (1.0, -0.05)]],
    "R": [_P, [(0.5, 0.45), (1, 0)]],
    "S": [[(1, 0.85), (0.7, 1), (0.3, 1), (0, 0.8), (0.2, 0.55), (0.8, 0.45), (1, 0.2),
           (0.7, 0), (0.3, 0), (0, 0.15)]],
    "T": [[(0, 1), (1, 1)], [(0.5, 1), (0.5, 0)]],
    "U": [[(0, 1), (0, 0.3), (0.3, 0), (0.7, 0), (1, 0.3), (1, 1)]],
    "V": [[(0, 1), (0.5, 0), (1, 1)]],
    "W": [[(0, 1), (0.25, 0), (0.5, 0.6), (0.75, 0), (1, 1)]],
    "X": [[(0, 0), (1, 1)], [(0, 1), (1, 0)]],
    "Y": [[(0, 1), (0.5, 0.5), (1, 1)], [(0.5, 0.5), (0.5, 0)]],
    "Z": [[(0, 1), (1, 1), (0, 0), (1, 0)]],
}

CAP_HEIGHT = 700.0


@dataclass
class GlyphStyle:
    weight: float = 0.10  # stroke thickness as a fraction of cap height
    slant: float = 0.0
    width: float = 0.8
    contrast: float = 1.0  # horizontal/vertical thickness ratio
    serif: float = 0.0  # serif bar length in stroke widths, 0 for none
    round_joins: bool = True

    @classmethod
    def random(cls, rng):
        return cls(
            weight=float(rng.uniform(0.04, 0.2)),
            slant=float(rng.choice([0.0, 0.0, rng.uniform(-0.15, 0.35)])),
            width=float(rng.uniform(0.55, 1.2)),
            contrast=float(rng.uniform(0.35, 1.4)),
            serif=float(rng.choice([0.0, rng.uniform(1.5, 3.5)])),
            round_joins=bool(rng.random() < 0.5),
        )


def _ccw(poly):
    x, y = np.asarray(poly).T
    area = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return poly if area > 0 else poly[::-1]


def _stroke_polygons(strokes, style):
    """Quads for every segment plus join discs and serif bars, all counter-clockwise."""
    polys = []
    base = style.weight * CAP_HEIGHT
    scale = np.array([style.width * CAP_HEIGHT, CAP_HEIGHT])
    for stroke in strokes:
        pts = np.asarray(stroke, float) * scale
        for p, q in zip(pts[:-1], pts[1:]):
            d = q - p
            length = np.hypot(*d)
            if length == 0:
                continue
            d = d / length
            # horizontal strokes get the contrast factor
            half = 0.5 * base * (abs(d[1]) + style.contrast * abs(d[0]))
            nrm = np.array([-d[1], d[0]]) * half
            ext = d * (half if not style.round_joins else 0)
            polys.append([p - ext + nrm, q + ext + nrm, q + ext - nrm, p - ext - nrm])
        if style.round_joins:
            for p in pts:
                r = 0.5 * base
                polys.append([p + r * np.array([math.cos(t), math.sin(t)])
                              for t in np.linspace(0, 2 * math.pi, 12, endpoint=False)])
        if style.serif > 0 and not np.allclose(pts[0], pts[-1]):
            h = 0.5 * base * style.contrast
            for p in (pts[0], pts[-1]):
                half_len = 0.5 * style.serif * base
                polys.append([p + (-half_len, -h), p + (half_len, -h), p + (half_len, h), p + (-half_len, h)])
    out = []
    for poly in polys:
        poly = np.asarray(poly)
        poly[:, 0] += style.slant * poly[:, 1]
        out.append(_ccw(poly))
    return out


def _glyph(polys):
    pen = TTGlyphPen(None)
    for poly in polys:
        pts = [(int(round(x)), int(round(y))) for x, y in poly]
        pen.moveTo(pts[0])
        for p in pts[1:]:
            pen.lineTo(p)
        pen.closePath()
    return pen.glyph()


def make_font(path, style=None, name="Synthetic", missing=(), solid=(), empty=()):
    """Write a TrueType font with glyphs for A-Z.

    ``missing`` letters get no cmap entry, ``empty`` letters map to a glyph with
    no contours, ``solid`` letters are a filled square. Returns the path.
    """
    style = style or GlyphStyle()
    letters = [c for c in SKELETONS if c not in missing]
    glyphs, metrics = {}, {}
    pen = TTGlyphPen(None)
    glyphs[".notdef"] = pen.glyph()
    metrics[".notdef"] = (500, 0)
    for c in letters:
        if c in empty:
            polys = []
        elif c in solid:
            polys = [np.array([(0, 0), (700, 0), (700, 700), (0, 700)], float)]
        else:
            polys = _stroke_polygons(SKELETONS[c], style)
        glyphs[c] = _glyph(polys) if polys else TTGlyphPen(None).glyph()
        xmin = int(min((p[:, 0].min() for p in polys), default=0))
        xmax = int(max((p[:, 0].max() for p in polys), default=500))
        metrics[c] = (max(xmax, 0) + 100, xmin)
    fb = FontBuilder(1000, isTTF=True)
    fb.setupGlyphOrder([".notdef", *letters])
    fb.setupCharacterMap({ord(c): c for c in letters})
    fb.setupGlyf(glyphs)
    fb.setupHorizontalMetrics(metrics)
    fb.setupHorizontalHeader(ascent=900, descent=-200)
    fb.setupNameTable({"familyName": name, "styleName": "Regular"})
    fb.setupOS2()
    fb.setupPost()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fb.save(str(path))
    return path


def make_corpus(out_dir, n, seed=0, prefix="synth"):
    """``n`` fonts with independently drawn random styles; returns their paths."""
    rng = np.random.default_rng(seed)
    return [make_font(Path(out_dir) / f"{prefix}{i:04d}.ttf", GlyphStyle.random(rng), f"{prefix}{i}")
            for i in range(n)]

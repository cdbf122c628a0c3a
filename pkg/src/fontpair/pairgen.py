"""Cross-character pair generation and font-disjoint split manifests."""

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import InsufficientFonts, MissingGlyphFile, SizeMismatch, TooFewFonts
from .raster import LETTERS


@dataclass(frozen=True)
class PairSample:
    char_a: str
    char_b: str
    font_a: str
    font_b: str
    label: int  # 1 = same font
    image_a_path: str | None = None
    image_b_path: str | None = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        return cls(d["char_a"], d["char_b"], d["font_a"], d["font_b"], int(d["label"]),
                   d.get("image_a_path"), d.get("image_b_path"))


def char_pairs(letters=LETTERS):
    """All unordered pairs of distinct letters, each as (smaller, larger)."""
    return list(combinations(sorted(letters), 2))


_PAIRS = char_pairs()


def count_pairs(n_fonts, n_chars=26):
    """``(positive pairs in the corpus, pairs per font)``."""
    if n_chars < 2:
        raise ValueError("n_chars must be >= 2")
    per_font = n_chars * (n_chars - 1) // 2
    return n_fonts * per_font, per_font


def _paths(dataset, font, a, b):
    if dataset is None:
        return None, None
    pa, pb = dataset.glyph_path(font[0], a), dataset.glyph_path(font[1], b)
    for p in (pa, pb):
        if not Path(p).exists():
            raise MissingGlyphFile(p)
    return pa, pb


def gen_positive(fonts, dataset=None):
    """One same-font sample per canonical letter pair, for every font."""
    for f in fonts:
        for a, b in _PAIRS:
            pa, pb = _paths(dataset, (f, f), a, b)
            yield PairSample(a, b, f, f, 1, pa, pb)


def gen_negative(fonts, count, seed, dataset=None):
    """``count`` different-font samples, drawn with replacement.

    Each draw picks a letter pair uniformly from the 325 and two distinct fonts
    uniformly; which font supplies the first letter is itself uniform.
    """
    fonts = list(fonts)
    n = len(fonts)
    if n < 2:
        raise InsufficientFonts(f"need at least 2 fonts for negatives, got {n}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pair_idx = rng.integers(len(_PAIRS), size=count)
    i = rng.integers(n, size=count)
    j = rng.integers(n - 1, size=count)
    j = j + (j >= i)
    for p, fi, fj in zip(pair_idx.tolist(), i.tolist(), j.tolist()):
        a, b = _PAIRS[p]
        pa, pb = _paths(dataset, (fonts[fi], fonts[fj]), a, b)
        yield PairSample(a, b, fonts[fi], fonts[fj], 0, pa, pb)


def balanced_pairs(fonts, seed, dataset=None, max_pairs=None):
    """All positives of ``fonts`` plus as many negatives, optionally subsampled.

    Subsampling keeps the classes balanced: ``max_pairs // 2`` of each label,
    chosen without replacement with the same seed.
    """
    fonts = sorted(fonts)
    pos = list(gen_positive(fonts, dataset))
    neg = list(gen_negative(fonts, len(pos), seed, dataset))
    if max_pairs is not None and max_pairs < len(pos) + len(neg):
        half = max_pairs // 2
        rng = np.random.default_rng(seed + 1)
        pos = [pos[k] for k in np.sort(rng.choice(len(pos), half, replace=False))]
        neg = [neg[k] for k in np.sort(rng.choice(len(neg), half, replace=False))]
    return pos + neg


def fonts_in(pairs):
    return {p.font_a for p in pairs} | {p.font_b for p in pairs}


def write_pairs(pairs, path):
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(p.to_json() + "\n")


def read_pairs(path):
    with open(path) as fh:
        return [PairSample.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass
class SplitManifest:
    seed: int
    train_fonts: list = field(default_factory=list)
    val_fonts: list = field(default_factory=list)
    test_fonts: list = field(default_factory=list)
    folds: list | None = None
    train_val_ratio: tuple = (5, 1)

    def __post_init__(self):
        parts = [set(self.train_fonts), set(self.val_fonts), set(self.test_fonts)]
        if sum(map(len, parts)) != len(set().union(*parts)):
            raise SizeMismatch("train/val/test font lists overlap")

    @property
    def k(self):
        return len(self.folds) if self.folds else 0

    def round(self, i):
        """``(train, val, test)`` fonts for cross-validation round ``i``.

        The held-out fold is the test set; the remaining fonts, in fold order,
        are cut train:val by ``train_val_ratio``.
        """
        if not self.folds:
            raise ValueError("manifest has no folds")
        rest = [f for j, fold in enumerate(self.folds) if j != i for f in fold]
        t, v = self.train_val_ratio
        n_val = int(round(len(rest) * v / (t + v)))
        return rest[: len(rest) - n_val], rest[len(rest) - n_val:], list(self.folds[i])

    def to_json(self):
        d = asdict(self)
        d["train_val_ratio"] = list(self.train_val_ratio)
        return json.dumps(d, sort_keys=True, indent=1)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        d["train_val_ratio"] = tuple(d.get("train_val_ratio", (5, 1)))
        return cls(**d)


def _shuffled(fonts, seed):
    fonts = sorted(set(fonts))
    order = np.random.default_rng(seed).permutation(len(fonts))
    return [fonts[i] for i in order]


def split_fonts(fonts, sizes, seed):
    """Seeded shuffle of the (sorted) font list, then consecutive slices."""
    n_train, n_val, n_test = sizes
    if min(sizes) < 0 or n_train + n_val + n_test > len(set(fonts)):
        raise SizeMismatch(f"sizes {tuple(sizes)} exceed {len(set(fonts))} fonts")
    s = _shuffled(fonts, seed)
    return SplitManifest(
        seed,
        s[:n_train],
        s[n_train:n_train + n_val],
        s[n_train + n_val:n_train + n_val + n_test],
    )


def make_folds(fonts, k=6, seed=0, train_val_ratio=(5, 1)):
    """``k`` contiguous chunks of a seeded shuffle; sizes differ by at most one."""
    s = _shuffled(fonts, seed)
    if k < 2 or len(s) < k:
        raise TooFewFonts(f"cannot make {k} folds from {len(s)} fonts")
    base, extra = divmod(len(s), k)
    bounds = np.concatenate([[0], np.cumsum([base + (i < extra) for i in range(k)])])
    folds = [s[bounds[i]:bounds[i + 1]] for i in range(k)]
    return SplitManifest(seed, folds=folds, train_val_ratio=tuple(train_val_ratio))

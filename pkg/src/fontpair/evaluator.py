"""Prediction, accuracy bookkeeping and cross-corpus evaluation.

Conventions: confusion rows are ground truth ``[same, different]`` and columns
the prediction in the same order. Character-pair matrices are indexed by
letter (``A`` = 0) and are symmetric with a zero diagonal.
"""

import csv
import json
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netmodel
from .errors import EmptyCorpus, EmptyDataset, LeakageDetected, ShapeMismatch
from .pairgen import balanced_pairs
from .raster import LETTERS, build_dataset, load_image

log = logging.getLogger(__name__)

_IDX = {c: i for i, c in enumerate(LETTERS)}


class ImageStore:
    """Decoded glyph arrays keyed by file path, loaded on first use."""

    def __init__(self):
        self.cache = {}

    def get(self, path):
        if path is None:
            raise FileNotFoundError("pair has no image path")
        return load_image(path, self.cache)

    def arrays(self, pairs):
        a = np.stack([self.get(p.image_a_path) for p in pairs]).astype(np.float32)
        b = np.stack([self.get(p.image_b_path) for p in pairs]).astype(np.float32)
        labels = np.array([p.label for p in pairs], dtype=np.int64)
        return a, b, labels


def predict_proba(checkpoint, pairs, store=None, batch_size=32, symmetrize=False):
    """Eval-mode ``p_same`` for each pair.

    With ``symmetrize`` the result is the mean over both slot orders.
    """
    store = store or ImageStore()
    size = checkpoint.config.input_size
    out = np.empty(len(pairs))
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        a, b, _ = store.arrays(chunk)
        if a.shape[1:] != (size, size):
            raise ShapeMismatch(f"images are {a.shape[1:]}, checkpoint expects ({size}, {size})")
        p = netmodel.forward(checkpoint, a, b)[:, netmodel.SAME]
        if symmetrize:
            p = 0.5 * (p + netmodel.forward(checkpoint, b, a)[:, netmodel.SAME])
        out[start:start + len(chunk)] = p
    return out


def decide(p_same):
    """Argmax of ``(1 - p_same, p_same)``; an exact tie goes to "different"."""
    return (np.asarray(p_same) > 0.5).astype(np.int64)


def predict(checkpoint, pairs, store=None, batch_size=32):
    p = predict_proba(checkpoint, pairs, store, batch_size)
    return list(zip(p.tolist(), decide(p).tolist()))


@dataclass
class EvalReport:
    n_pairs: int
    accuracy: float
    confusion: np.ndarray
    charpair_errors: np.ndarray
    charpair_totals: np.ndarray
    charpair_errors_same: np.ndarray
    charpair_errors_different: np.ndarray
    ranked_pairs: list
    per_font_errors: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n_pairs": self.n_pairs,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "charpair_errors": self.charpair_errors.tolist(),
            "charpair_totals": self.charpair_totals.tolist(),
            "charpair_errors_same": self.charpair_errors_same.tolist(),
            "charpair_errors_different": self.charpair_errors_different.tolist(),
            "ranked_pairs": self.ranked_pairs,
            "per_font_errors": self.per_font_errors,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda k: np.asarray(d[k], dtype=np.int64)  # noqa: E731
        return cls(d["n_pairs"], d["accuracy"], arr("confusion"), arr("charpair_errors"),
                   arr("charpair_totals"), arr("charpair_errors_same"),
                   arr("charpair_errors_different"), d["ranked_pairs"], d["per_font_errors"],
                   d.get("extra", {}))

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        with open(out / "confusion.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["truth\\predicted", "same", "different"])
            w.writerow(["same", *self.confusion[0]])
            w.writerow(["different", *self.confusion[1]])
        with open(out / "charpair_matrix.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["", *LETTERS])
            for c, row in zip(LETTERS, self.charpair_errors):
                w.writerow([c, *row])
        with open(out / "ranked_pairs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "pair", "accuracy", "errors", "totals"])
            for i, r in enumerate(self.ranked_pairs, 1):
                w.writerow([i, r["pair"], f"{r['accuracy']:.6f}", r["errors"], r["totals"]])

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "report.json"
        return cls.from_dict(json.loads(path.read_text()))


def accuracy_from_confusion(confusion):
    c = np.asarray(confusion)
    return float((c[0, 0] + c[1, 1]) / c.sum())


def build_report(pairs, predicted):
    """Aggregate labelled pairs and their predicted labels into a report."""
    if len(pairs) == 0:
        raise EmptyDataset("no pairs to evaluate")
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.array([p.label for p in pairs], dtype=np.int64)
    ia = np.array([_IDX[p.char_a] for p in pairs])
    ib = np.array([_IDX[p.char_b] for p in pairs])
    wrong = predicted != truth

    confusion = np.zeros((2, 2), dtype=np.int64)
    # row/column 0 is "same" (label 1)
    np.add.at(confusion, (1 - truth, 1 - predicted), 1)

    def sym(weights):
        m = np.zeros((26, 26), dtype=np.int64)
        np.add.at(m, (ia, ib), weights)
        np.add.at(m, (ib, ia), weights)
        return m

    totals = sym(np.ones(len(pairs), dtype=np.int64))
    errors = sym(wrong.astype(np.int64))
    errors_same = sym((wrong & (truth == 1)).astype(np.int64))
    errors_diff = sym((wrong & (truth == 0)).astype(np.int64))

    ranked = []
    for i in range(26):
        for j in range(i + 1, 26):
            if totals[i, j]:
                ranked.append({
                    "pair": f"{LETTERS[i]}-{LETTERS[j]}",
                    "accuracy": 1.0 - errors[i, j] / totals[i, j],
                    "errors": int(errors[i, j]),
                    "totals": int(totals[i, j]),
                })
    ranked.sort(key=lambda r: (-r["accuracy"], r["pair"]))

    per_font = {}
    for p, w in zip(pairs, wrong.tolist()):
        if p.label == 1:
            per_font[p.font_a] = per_font.get(p.font_a, 0) + int(w)

    return EvalReport(
        n_pairs=len(pairs),
        accuracy=accuracy_from_confusion(confusion),
        confusion=confusion,
        charpair_errors=errors,
        charpair_totals=totals,
        charpair_errors_same=errors_same,
        charpair_errors_different=errors_diff,
        ranked_pairs=ranked,
        per_font_errors=dict(sorted(per_font.items())),
    )


def evaluate(checkpoint, pairs, store=None, batch_size=32):
    if len(pairs) == 0:
        raise EmptyDataset("no pairs to evaluate")
    p = predict_proba(checkpoint, pairs, store, batch_size)
    report = build_report(pairs, decide(p))
    report.extra["mean_loss"] = float(np.mean(netmodel.loss(np.column_stack([1 - p, p]),
                                                            [q.label for q in pairs])))
    return report


def rank_charpairs(report, n=20):
    """``(worst, best)`` lists of ``(pair, accuracy)``; ties resolve alphabetically."""
    rows = [(r["pair"], r["accuracy"]) for r in report.ranked_pairs]
    worst = sorted(rows, key=lambda r: (r[1], r[0]))[:n]
    best = sorted(rows, key=lambda r: (-r[1], r[0]))[:n]
    return worst, best


def worst_fonts(report, n=None):
    """Fonts by descending error count on their same-font pairs."""
    ranked = sorted(report.per_font_errors.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if n is None else ranked[:n]


def cross_evaluate(checkpoint, external_corpus_dir, seed, out_dir=None, store=None,
                   max_pairs=None, exclude=(), ink_bounds=(0.01, 0.60), workers=1):
    """Rasterize an external font directory and evaluate on all of its pairs.

    Fonts whose file digest appears in the checkpoint's training provenance
    raise :class:`LeakageDetected`; when the checkpoint carries no digests the
    disjointness check is skipped with a warning.
    """
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        out_dir = tmp.name
    try:
        ds = build_dataset(external_corpus_dir, out_dir, checkpoint.config.input_size,
                           exclude, ink_bounds, workers)
        if not ds.font_ids:
            raise EmptyCorpus(f"no usable fonts under {external_corpus_dir}")
        seen = set(checkpoint.metadata.get("train_font_digests", []))
        if not seen:
            log.warning("checkpoint has no training font digests; disjointness unverified")
        else:
            shared = seen & ds.digests()
            if shared:
                raise LeakageDetected(f"{len(shared)} external fonts were used in training")
        pairs = balanced_pairs(ds.font_ids, seed, ds, max_pairs)
        report = evaluate(checkpoint, pairs, store)
        report.extra.update(n_fonts=len(ds.font_ids), corpus=str(external_corpus_dir),
                            n_positive=sum(p.label for p in pairs),
                            n_negative=sum(1 - p.label for p in pairs))
        return report
    finally:
        if tmp is not None:
            tmp.cleanup()

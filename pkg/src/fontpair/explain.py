"""PCA of stream features and Grad-CAM contribution maps, with renderers."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import netmodel
from .errors import IdenticalCharacters, ShapeMismatch, TooFewFonts
from .evaluator import ImageStore

TARGETS = {"different": netmodel.DIFFERENT, "same": netmodel.SAME}
TARGET_NAMES = {v: k for k, v in TARGETS.items()}


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaFit:
    mean: np.ndarray
    components: np.ndarray  # (n_components, d), orthonormal rows
    eigenvalues: np.ndarray  # all covariance eigenvalues, descending

    @property
    def explained_variance(self):
        return self.eigenvalues[: len(self.components)]

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z):
        return z @ self.components + self.mean


def fit_pca(x, n_components=2):
    """Eigendecomposition of the sample covariance (``1/(n-1)`` normalisation).

    With more dimensions than samples the ``n x n`` Gram matrix is decomposed
    instead and its eigenvectors mapped back; the nonzero spectrum is the same.
    Each component is signed so its largest-magnitude coefficient is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise TooFewFonts("PCA needs at least 2 samples")
    mean = x.mean(axis=0)
    xc = x - mean
    if d <= n:
        evals, evecs = np.linalg.eigh(xc.T @ xc / (n - 1))
        order = np.argsort(evals)[::-1]
        evals, comps = evals[order], evecs[:, order].T
    else:
        evals, u = np.linalg.eigh(xc @ xc.T / (n - 1))
        order = np.argsort(evals)[::-1]
        evals, u = evals[order], u[:, order]
        k = min(n_components, n)
        if evals[k - 1] <= 1e-12 * max(evals[0], 1e-300):
            # rank-deficient cloud: take an orthonormal basis from the SVD instead
            _, _, vt = np.linalg.svd(xc, full_matrices=False)
            comps = vt
        else:
            comps = (xc.T @ u[:, :k] / np.sqrt((n - 1) * evals[:k])).T
    evals = np.clip(evals, 0, None)
    comps = comps[:n_components].copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    return PcaFit(mean, comps, evals)


def overlap_score(points_a, points_b):
    """How indistinguishable two 2-D point clouds are, in ``[0, 1]``.

    Leave-one-out nearest-centroid classification of each point's cloud; the
    balanced accuracy ``acc`` is mapped to ``2 * (1 - acc)`` and clipped, so
    chance level or worse gives 1 and perfect separation gives 0. A point
    equidistant from both centroids counts as misclassified.
    """
    pa, pb = np.asarray(points_a, float), np.asarray(points_b, float)
    if len(pa) < 2 or len(pb) < 2:
        raise TooFewFonts("need at least 2 points per cloud")
    sa, sb = pa.sum(axis=0), pb.sum(axis=0)

    def recall(own, own_sum, other_sum, n_other):
        c_own = (own_sum - own) / (len(own) - 1)
        c_other = other_sum / n_other
        d_own = np.sum((own - c_own) ** 2, axis=1)
        d_other = np.sum((own - c_other) ** 2, axis=1)
        return float(np.mean(d_own < d_other))

    acc = 0.5 * (recall(pa, sa, sb, len(pb)) + recall(pb, sb, sa, len(pa)))
    return float(np.clip(2 * (1 - acc), 0, 1))


@dataclass
class PcaProjection:
    char_a: str
    char_b: str
    fonts: list
    components: np.ndarray
    explained_variance: np.ndarray
    points_a: np.ndarray
    points_b: np.ndarray
    overlap_score: float
    fit: PcaFit | None = field(default=None, repr=False)


def stream_vectors(checkpoint, images, batch_size=32):
    out = []
    for s in range(0, len(images), batch_size):
        out.append(netmodel.stream_forward(checkpoint, images[s:s + batch_size]).flat)
    return np.concatenate(out).astype(np.float64)


def pca_project(checkpoint, dataset, fonts, char_a, char_b, store=None):
    """Project both letters of every font into one shared 2-D PCA basis."""
    if char_a == char_b:
        raise IdenticalCharacters(f"{char_a!r} twice")
    fonts = list(fonts)
    if len(fonts) < 3:
        raise TooFewFonts(f"need >= 3 fonts, got {len(fonts)}")
    store = store or ImageStore()
    imgs_a = np.stack([store.get(dataset.glyph_path(f, char_a)) for f in fonts]).astype(np.float32)
    imgs_b = np.stack([store.get(dataset.glyph_path(f, char_b)) for f in fonts]).astype(np.float32)
    va, vb = stream_vectors(checkpoint, imgs_a), stream_vectors(checkpoint, imgs_b)
    return project_vectors(va, vb, fonts, char_a, char_b)


def project_vectors(va, vb, fonts, char_a, char_b):
    fit = fit_pca(np.concatenate([va, vb]), 2)
    pa, pb = fit.transform(va), fit.transform(vb)
    return PcaProjection(char_a, char_b, list(fonts), fit.components, fit.explained_variance,
                         pa, pb, overlap_score(pa, pb), fit)


def write_points_csv(projection, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["font_id", "char", "pc1", "pc2"])
        for ch, pts in ((projection.char_a, projection.points_a), (projection.char_b, projection.points_b)):
            for f, (x, y) in zip(projection.fonts, pts):
                w.writerow([f, ch, repr(float(x)), repr(float(y))])


def read_points_csv(path):
    """``{char: (fonts, points)}`` from a file written by :func:`write_points_csv`."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fonts, pts = out.setdefault(row["char"], ([], []))
            fonts.append(row["font_id"])
            pts.append((float(row["pc1"]), float(row["pc2"])))
    return {c: (f, np.array(p)) for c, (f, p) in out.items()}


def render_scatter(projection, out_dir):
    """Write ``pca_scatter.png`` and ``pca_points.csv``; returns both paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "pca_points.csv"
    png_path = out / "pca_scatter.png"
    write_points_csv(projection, csv_path)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(*projection.points_a.T, s=12, c="tab:red", label=projection.char_a)
    ax.scatter(*projection.points_b.T, s=12, c="tab:blue", label=projection.char_b)
    ev = projection.explained_variance
    ax.set_xlabel(f"PC1 (var {ev[0]:.3g})")
    ax.set_ylabel(f"PC2 (var {ev[1]:.3g})")
    ax.set_title(f"{projection.char_a}-{projection.char_b}  overlap {projection.overlap_score:.2f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return png_path, csv_path


# ---------------------------------------------------------------------------
# Grad-CAM


@dataclass
class ContributionMap:
    raw: np.ndarray
    upsampled: np.ndarray
    target_class: str
    slot: str
    alpha: np.ndarray


def _resize_matrix(n_in, n_out, mode):
    dst = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    m = np.zeros((n_out, n_in))
    if mode == "nearest":
        m[np.arange(n_out), np.clip(np.floor(dst + 0.5), 0, n_in - 1).astype(int)] = 1
        return m
    src = np.clip(dst, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    np.add.at(m, (np.arange(n_out), lo), 1 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def upsample(raw, size, mode="bilinear"):
    """Half-pixel-centred bilinear (or nearest) resize of a 2-D map."""
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown upsampling mode {mode!r}")
    h, w = raw.shape
    return _resize_matrix(h, size, mode) @ raw @ _resize_matrix(w, size, mode).T


def _target_index(checkpoint, image_a, image_b, target_class):
    if target_class is None or target_class == "auto":
        p_same = netmodel.forward(checkpoint, image_a, image_b)[netmodel.SAME]
        return int(p_same > 0.5)
    if isinstance(target_class, str):
        return TARGETS[target_class]
    return int(target_class)


def grad_cam(checkpoint, image_a, image_b, target_class=None, mode="bilinear"):
    """Contribution maps for both slots w.r.t. the pre-softmax score of the target.

    ``target_class`` is ``"same"``, ``"different"``, an output index, or None
    for the predicted class.
    """
    a, b = np.asarray(image_a, np.float32), np.asarray(image_b, np.float32)
    size = checkpoint.config.input_size
    if a.shape != (size, size) or b.shape != (size, size):
        raise ShapeMismatch(f"expected two ({size}, {size}) images")
    t = _target_index(checkpoint, a, b, target_class)
    ma, mb, ga, gb = netmodel.target_gradients(checkpoint, a[None], b[None], t)
    out = []
    for slot, acts, grads in (("a", ma[0], ga[0]), ("b", mb[0], gb[0])):
        acts, grads = acts.astype(np.float64), grads.astype(np.float64)
        alpha = grads.mean(axis=(1, 2))
        raw = np.maximum(np.tensordot(alpha, acts, axes=1), 0)
        up = np.maximum(upsample(raw, size, mode), 0)
        peak = up.max()
        if peak > 0:
            up = up / peak
        out.append(ContributionMap(raw, up, TARGET_NAMES[t], slot, alpha))
    return tuple(out)


def gradcam_meta(map_a, map_b, probs):
    def stats(m):
        return {"alpha_mean": float(m.alpha.mean()), "alpha_min": float(m.alpha.min()),
                "alpha_max": float(m.alpha.max()), "raw_max": float(m.raw.max())}

    return {
        "target_class": map_a.target_class,
        "p_same": float(probs[netmodel.SAME]),
        "prediction": "same" if probs[netmodel.SAME] > 0.5 else "different",
        "slot_a": stats(map_a),
        "slot_b": stats(map_b),
    }


def overlay(heat, base, opacity=0.5, colormap="jet"):
    """Blend a colour-mapped ``[0, 1]`` map over a glyph drawn black on white."""
    from matplotlib import colormaps

    heat = np.asarray(heat, dtype=np.float64)
    base = np.asarray(base)
    if heat.shape != base.shape:
        raise ShapeMismatch(f"map {heat.shape} vs glyph {base.shape}")
    glyph = np.repeat((255.0 * (1 - base))[..., None], 3, axis=2)
    ramp = colormaps[colormap](np.clip(heat, 0, 1))[..., :3] * 255.0
    return np.rint((1 - opacity) * glyph + opacity * ramp).astype(np.uint8)


def render_heatmap(cmap, base, path, opacity=0.5):
    """Write the overlay of a :class:`ContributionMap` (or bare array) as RGB PNG."""
    heat = cmap.upsampled if isinstance(cmap, ContributionMap) else cmap
    pixels = base.pixels if hasattr(base, "pixels") else base
    rgb = overlay(heat, pixels, opacity)
    Image.fromarray(rgb, mode="RGB").save(path)
    return rgb

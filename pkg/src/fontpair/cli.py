"""``fontpair`` command line.

Exit codes: 0 success, 1 domain/validation error (one ``error <code>: ...``
line on stderr), 2 usage error. Commands that write an output directory also
write ``run_meta.json`` there, including when they fail after argument
resolution.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, evaluator, explain, netmodel, pairgen, raster, trainer
from .errors import FontPairError, MissingReport

log = logging.getLogger("fontpair")

DATA_DEFAULTS = {"pair_seed": 0, "max_train_pairs": None, "max_eval_pairs": None}


def _digest(path):
    p = Path(path)
    if p.is_dir():
        p = p / "fonts.jsonl"
    if not p.is_file():
        return None
    return hashlib.sha256(p.read_bytes()).hexdigest()


def _default_seed():
    return int(os.environ.get("FONTPAIR_SEED", 0))


def resolve_configs(args):
    """Model/train/data settings: flags override the config file, which overrides defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            file_cfg = tomllib.load(fh)
    model = netmodel.ModelConfig().to_dict()
    train = trainer.TrainConfig().to_dict()
    data = dict(DATA_DEFAULTS)
    model.update(file_cfg.get("model", {}))
    train.update(file_cfg.get("train", {}))
    data.update(file_cfg.get("data", {}))
    train["seed"] = args.seed if args.seed_given else train.get("seed", args.seed)
    flag_map = {
        "epochs": (train, "max_epochs"), "batch_size": (train, "batch_size"),
        "lr": (train, "learning_rate"), "patience": (train, "early_stop_patience"),
        "micro_batch": (train, "micro_batch"), "max_train_pairs": (data, "max_train_pairs"),
        "max_eval_pairs": (data, "max_eval_pairs"), "pair_seed": (data, "pair_seed"),
        "input_size": (model, "input_size"), "max_wall_time": (train, "max_wall_time"),
        "log_every": (train, "log_every"),
    }
    for flag, (target, key) in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            target[key] = value
    if getattr(args, "resample_negatives", False):
        train["resample_negatives"] = True
    known = {f.name for f in fields(trainer.TrainConfig)}
    return (netmodel.ModelConfig.from_dict(model),
            trainer.TrainConfig(**{k: v for k, v in train.items() if k in known}), data)


# ---------------------------------------------------------------------------
# subcommands; each returns a dict merged into run_meta.json


def cmd_build_dataset(args):
    exclude = set()
    if args.exclude:
        if Path(args.exclude).is_file():
            exclude = {ln.strip() for ln in Path(args.exclude).read_text().splitlines() if ln.strip()}
        else:
            exclude = {s for s in args.exclude.split(",") if s}
    ds = raster.build_dataset(args.fonts_dir, args.out, args.size, exclude,
                              (args.ink_low, args.ink_high), args.workers)
    print(f"kept {len(ds.font_ids)} fonts -> {args.out}")
    return {"n_fonts": len(ds.font_ids)}


def cmd_split(args):
    ds = raster.GlyphDataset(args.dataset)
    m = pairgen.split_fonts(ds.font_ids, (args.train, args.val, args.test), args.seed)
    out = Path(args.out or Path(args.dataset) / "split.json")
    m.save(out)
    print(f"split {len(m.train_fonts)}/{len(m.val_fonts)}/{len(m.test_fonts)} -> {out}")
    return {"inputs": {"dataset": _digest(args.dataset)}}


def cmd_folds(args):
    ds = raster.GlyphDataset(args.dataset)
    t, v = (int(x) for x in args.ratio.split(":"))
    m = pairgen.make_folds(ds.font_ids, args.k, args.seed, (t, v))
    out = Path(args.out or Path(args.dataset) / "folds.json")
    m.save(out)
    print(f"{args.k} folds of sizes {[len(f) for f in m.folds]} -> {out}")
    return {"inputs": {"dataset": _digest(args.dataset)}}


def _split_parts(manifest, fold):
    if fold is not None:
        return manifest.round(fold)
    return manifest.train_fonts, manifest.val_fonts, manifest.test_fonts


def cmd_pairs(args):
    _, _, data = resolve_configs(args)
    ds = raster.GlyphDataset(args.dataset)
    m = pairgen.SplitManifest.load(args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    caps = (data["max_train_pairs"], data["max_eval_pairs"], data["max_eval_pairs"])
    for offset, (name, fonts, cap) in enumerate(zip(("train", "val", "test"), _split_parts(m, args.fold), caps)):
        if len(fonts) < 2:
            continue
        pairs = pairgen.balanced_pairs(fonts, data["pair_seed"] + offset, ds, cap)
        pairgen.write_pairs(pairs, out / f"{name}_pairs.jsonl")
        counts[name] = len(pairs)
    print(json.dumps(counts))
    return {"counts": counts, "data": data,
            "inputs": {"dataset": _digest(args.dataset), "split": _digest(args.split)}}


def cmd_count_pairs(args):
    pos, per = pairgen.count_pairs(args.fonts, args.chars)
    print(f"{pos:,} positives / {per} per font ({2 * pos:,} pairs with balanced negatives)")
    return {}


def _load_train_val(args, data, ds):
    if args.pairs:
        p = Path(args.pairs)
        return pairgen.read_pairs(p / "train_pairs.jsonl"), pairgen.read_pairs(p / "val_pairs.jsonl"), None
    m = pairgen.SplitManifest.load(args.split)
    tr, va, te = _split_parts(m, args.fold)
    return (pairgen.balanced_pairs(tr, data["pair_seed"], ds, data["max_train_pairs"]),
            pairgen.balanced_pairs(va, data["pair_seed"] + 1, ds, data["max_eval_pairs"]), te)


def cmd_train(args):
    model_cfg, train_cfg, data = resolve_configs(args)
    ds = raster.GlyphDataset(args.dataset) if args.dataset else None
    if ds is None and not args.pairs:
        raise SystemExit("train needs --dataset with --split, or --pairs")
    train_pairs, val_pairs, test_fonts = _load_train_val(args, data, ds)
    meta = {"split": args.split, "fold": args.fold, "pair_seed": data["pair_seed"]}
    if ds is not None:
        meta["train_font_digests"] = sorted(ds.digests(sorted(
            pairgen.fonts_in(train_pairs) | pairgen.fonts_in(val_pairs))))
    ckpt, tlog = trainer.train(model_cfg, train_pairs, val_pairs, train_cfg, dataset=ds,
                               forbidden_fonts=test_fonts or (), metadata=meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "model.ckpt")
    tlog.write_csv(out / "train_log.csv")
    print(f"best val_acc {tlog.best_val_acc:.4f} at epoch {tlog.best_epoch} -> {out / 'model.ckpt'}")
    return {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": data,
            "best_val_acc": tlog.best_val_acc, "best_epoch": tlog.best_epoch,
            "inputs": {"dataset": _digest(args.dataset) if args.dataset else None,
                       "split": _digest(args.split) if args.split else None}}


def cmd_cv(args):
    model_cfg, train_cfg, data = resolve_configs(args)
    ds = raster.GlyphDataset(args.dataset)
    folds = pairgen.SplitManifest.load(args.folds)
    res = trainer.run_cv(model_cfg, train_cfg, folds, ds, args.k, data["pair_seed"],
                         data["max_train_pairs"], data["max_eval_pairs"])
    out = Path(args.out)
    for i, (ckpt, report, tlog) in enumerate(res.rounds):
        fold_dir = out / f"fold{i}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        ckpt.save(fold_dir / "model.ckpt")
        tlog.write_csv(fold_dir / "train_log.csv")
        report.save(fold_dir)
    summary = {"accuracies": res.accuracies, "mean": res.mean, "std": res.std}
    (out / "cv_summary.json").write_text(json.dumps(summary, indent=1))
    print(f"accuracy {100 * res.mean:.2f} +/- {100 * res.std:.2f} % over {len(res.accuracies)} folds")
    return {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": data, **summary,
            "inputs": {"dataset": _digest(args.dataset), "folds": _digest(args.folds)}}


def cmd_eval(args):
    ckpt = netmodel.ModelCheckpoint.load(args.ckpt)
    pairs = pairgen.read_pairs(args.pairs)
    store = evaluator.ImageStore()
    p = evaluator.predict_proba(ckpt, pairs, store, symmetrize=args.symmetrize)
    report = evaluator.build_report(pairs, evaluator.decide(p))
    out = Path(args.out)
    report.save(out)
    with open(out / "predictions.csv", "w") as fh:
        fh.write("index,p_same,predicted,label\n")
        for i, (q, pair) in enumerate(zip(p, pairs)):
            fh.write(f"{i},{q:.6f},{int(q > 0.5)},{pair.label}\n")
    print(f"accuracy {report.accuracy:.4f} on {report.n_pairs} pairs -> {out}")
    return {"accuracy": report.accuracy,
            "inputs": {"ckpt": _digest(args.ckpt), "pairs": _digest(args.pairs)}}


def cmd_cross_eval(args):
    ckpt = netmodel.ModelCheckpoint.load(args.ckpt)
    out = Path(args.out)
    report = evaluator.cross_evaluate(ckpt, args.fonts_dir, args.seed, out / "dataset",
                                      max_pairs=args.max_pairs, workers=args.workers)
    report.save(out)
    print(f"cross-dataset accuracy {report.accuracy:.4f} on {report.n_pairs} pairs")
    return {"accuracy": report.accuracy, "inputs": {"ckpt": _digest(args.ckpt)}}


def cmd_pca(args):
    ckpt = netmodel.ModelCheckpoint.load(args.ckpt)
    ds = raster.GlyphDataset(args.dataset)
    m = pairgen.SplitManifest.load(args.split)
    fonts = {"train": m.train_fonts, "val": m.val_fonts, "test": m.test_fonts}[args.fonts]
    if m.folds and args.fold is not None:
        fonts = m.round(args.fold)[2]
    a, b = args.chars
    proj = explain.pca_project(ckpt, ds, fonts, a, b)
    png, csv_path = explain.render_scatter(proj, args.out)
    print(f"{a}-{b}: overlap {proj.overlap_score:.3f} -> {png}")
    return {"overlap_score": proj.overlap_score,
            "explained_variance": proj.explained_variance.tolist(),
            "inputs": {"ckpt": _digest(args.ckpt), "split": _digest(args.split)}}


def cmd_gradcam(args):
    ckpt = netmodel.ModelCheckpoint.load(args.ckpt)
    pairs = pairgen.read_pairs(args.pair_manifest)
    pair = pairs[args.index]
    store = evaluator.ImageStore()
    a, b = store.get(pair.image_a_path), store.get(pair.image_b_path)
    target = None if args.target == "auto" else args.target
    mode = "nearest" if args.nearest else "bilinear"
    ma, mb = explain.grad_cam(ckpt, a, b, target, mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"pair{args.index}_{pair.char_a}{pair.char_b}"
    explain.render_heatmap(ma, a, out / f"{stem}_a.png")
    explain.render_heatmap(mb, b, out / f"{stem}_b.png")
    probs = netmodel.forward(ckpt, a.astype(np.float32), b.astype(np.float32))
    meta = explain.gradcam_meta(ma, mb, probs)
    meta.update(index=args.index, label=pair.label, font_a=pair.font_a, font_b=pair.font_b,
                char_a=pair.char_a, char_b=pair.char_b)
    (out / "gradcam_meta.json").write_text(json.dumps(meta, indent=1))
    print(json.dumps(meta))
    return {"inputs": {"ckpt": _digest(args.ckpt), "pairs": _digest(args.pair_manifest)}}


def report(run_dir):
    """Write ``summary.txt`` and ``summary.json`` for the report in ``run_dir``."""
    run_dir = Path(run_dir)
    if not (run_dir / "report.json").is_file():
        raise MissingReport(f"no report.json in {run_dir}")
    rep = evaluator.EvalReport.load(run_dir)
    worst, best = evaluator.rank_charpairs(rep, 20)
    summary = {
        "accuracy": rep.accuracy,
        "n_pairs": rep.n_pairs,
        "confusion": {"rows_truth_cols_predicted": ["same", "different"],
                      "matrix": rep.confusion.tolist()},
        "worst_pairs": worst,
        "best_pairs": best,
        "worst_fonts": evaluator.worst_fonts(rep, 10),
        "figures": sorted(str(p.relative_to(run_dir)) for p in run_dir.rglob("*.png")),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    c = rep.confusion
    lines = [
        f"pairs evaluated: {rep.n_pairs}",
        f"accuracy: {100 * rep.accuracy:.2f}%",
        "",
        "confusion (rows = truth, cols = predicted)",
        f"{'':>10} {'same':>10} {'different':>10}",
        f"{'same':>10} {c[0, 0]:>10} {c[0, 1]:>10}",
        f"{'different':>10} {c[1, 0]:>10} {c[1, 1]:>10}",
        "",
        "worst character pairs: " + ", ".join(f"{p} {a:.3f}" for p, a in worst),
        "best character pairs: " + ", ".join(f"{p} {a:.3f}" for p, a in best),
        "fonts with most same-font errors: " + ", ".join(f"{f} ({n})" for f, n in summary["worst_fonts"]),
    ]
    if summary["figures"]:
        lines += ["", "figures:"] + [f"  {f}" for f in summary["figures"]]
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


def cmd_report(args):
    summary = report(args.run_dir)
    print((Path(args.run_dir) / "summary.txt").read_text(), end="")
    return {"accuracy": summary["accuracy"]}


def cmd_defaults(args):
    out = {"model": netmodel.ModelConfig().to_dict(), "train": trainer.TrainConfig().to_dict(),
           "data": dict(DATA_DEFAULTS),
           "raster": {"size": 100, "ink_low": 0.01, "ink_high": 0.60, "margin": "ceil(0.05*size)"},
           "seed": args.seed}
    print(json.dumps(out, indent=1))
    return {}


# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a subcommand does not reset values given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="global seed (default: $FONTPAIR_SEED or 0)")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help="single worker; runs are bit-reproducible")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--config", help="TOML file with [model], [train], [data] tables")
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", type=int)
    training.add_argument("--micro-batch", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--patience", type=int)
    training.add_argument("--max-train-pairs", type=int)
    training.add_argument("--max-eval-pairs", type=int)
    training.add_argument("--pair-seed", type=int)
    training.add_argument("--input-size", type=int)
    training.add_argument("--resample-negatives", action="store_true")
    training.add_argument("--max-wall-time", type=float, help="seconds; checked after each epoch")
    training.add_argument("--log-every", type=int, help="optimizer steps between progress lines")

    ap = argparse.ArgumentParser(prog="fontpair", parents=[common],
                                 description="Character-independent font identification.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help, parents=()):
        p = sub.add_parser(name, help=help, parents=[common, *parents])
        p.set_defaults(func=fn)
        return p

    p = add("build-dataset", cmd_build_dataset, "rasterize a font directory")
    p.add_argument("--fonts-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--exclude", help="file of font ids, or comma-separated ids")
    p.add_argument("--ink-low", type=float, default=0.01)
    p.add_argument("--ink-high", type=float, default=0.60)

    p = add("split", cmd_split, "font-disjoint train/val/test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--val", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--out")

    p = add("folds", cmd_folds, "k-fold font partition")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--ratio", default="5:1", help="train:val ratio inside each round")
    p.add_argument("--out")

    p = add("pairs", cmd_pairs, "write balanced pair manifests for a split", [training])
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--fold", type=int)
    p.add_argument("--out", required=True)

    p = add("count-pairs", cmd_count_pairs, "pair arithmetic for a corpus size")
    p.add_argument("--fonts", type=int, required=True)
    p.add_argument("--chars", type=int, default=26)

    p = add("train", cmd_train, "train one model", [training])
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--fold", type=int)
    p.add_argument("--pairs", help="directory with train_pairs.jsonl and val_pairs.jsonl")
    p.add_argument("--out", required=True)

    p = add("cv", cmd_cv, "k-fold cross-validation", [training])
    p.add_argument("--dataset", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a checkpoint on a pair manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--symmetrize", action="store_true", help="average both slot orders")

    p = add("cross-eval", cmd_cross_eval, "evaluate on an external font directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fonts-dir", required=True)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--out", required=True)

    p = add("pca", cmd_pca, "PCA scatter of stream features for two letters")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--fonts", choices=("train", "val", "test"), default="test")
    p.add_argument("--fold", type=int)
    p.add_argument("--chars", nargs=2, required=True, metavar=("A", "B"))
    p.add_argument("--out", required=True)

    p = add("gradcam", cmd_gradcam, "Grad-CAM maps for one pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pair-manifest", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--target", choices=("auto", "same", "different"), default="auto")
    p.add_argument("--nearest", action="store_true", help="nearest-neighbour upsampling")
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "summarise an evaluation directory")
    p.add_argument("run_dir")

    add("defaults", cmd_defaults, "print every default setting")
    return ap


def _meta_path(args):
    """Where ``run_meta.json`` goes; commands writing a single manifest file
    get ``<manifest stem>.run_meta.json`` beside it."""
    if args.command == "report":
        return Path(args.run_dir) / "run_meta.json"
    if args.command in ("split", "folds"):
        default = "split.json" if args.command == "split" else "folds.json"
        target = Path(args.out or Path(args.dataset) / default)
        return target.with_name(target.stem + ".run_meta.json")
    out = getattr(args, "out", None)
    return Path(out) / "run_meta.json" if out else None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = hasattr(args, "seed")
    if not args.seed_given:
        args.seed = _default_seed()
    for name, value in (("workers", 1), ("deterministic", False), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, value)
    if args.deterministic:
        args.workers = 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    meta = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
            "seed": args.seed, "version": __version__,
            "args": {k: v for k, v in vars(args).items() if k != "func"}}
    t0 = time.time()
    code = 0
    try:
        meta.update(args.func(args) or {})
        meta["status"] = "ok"
    except FontPairError as exc:
        meta["status"] = exc.code
        print(f"error {exc.code}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        code = 1
    except (FileNotFoundError, ValueError) as exc:
        meta["status"] = type(exc).__name__
        print(f"error cli.{type(exc).__name__}: {exc}", file=sys.stderr)
        code = 1
    finally:
        path = _meta_path(args)
        if path is not None:
            meta["wall_time"] = round(time.time() - t0, 3)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(meta, indent=1, sort_keys=True, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())

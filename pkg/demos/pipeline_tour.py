"""Every CLI stage once, on procedurally generated fonts, in a few minutes.

    python demos/pipeline_tour.py --out /tmp/tour

The fonts come from ``fontpair.testing.make_corpus``: one stroke skeleton per
letter, dressed in a random style (weight, slant, width, contrast, serifs) per
font. Glyphs are rendered at 32x32 and the network is a narrow variant so the
whole run fits on one core. Dropout is off because a few hundred optimizer
steps are too few to learn through its noise. Swap ``--fonts-dir`` for a real
font directory and drop the ``[model]`` table to run at full size.
"""
import argparse
import json
from pathlib import Path

from fontpair import cli
from fontpair.testing import make_corpus

TOML = """\
[model]
input_size = 32
conv_channels = [8, 8, 16, 16]
fc_sizes = [64, 32, 2]
dropout_keep = 1.0

[train]
batch_size = 32
learning_rate = 3e-4
max_epochs = 6
early_stop_patience = 3

[data]
max_train_pairs = 6000
max_eval_pairs = 600
"""


def step(*argv):
    argv = [str(a) for a in argv]
    print("$ fontpair " + " ".join(argv))
    code = cli.main(argv)
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("tour"))
    ap.add_argument("--fonts-dir", type=Path, help="real fonts instead of generated ones")
    ap.add_argument("--n-fonts", type=int, default=40)
    args = ap.parse_args()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    fonts = args.fonts_dir
    if fonts is None:
        fonts = out / "fonts"
        make_corpus(fonts, args.n_fonts, seed=7)
        # a corpus from a different generator seed stands in for an external collection
        make_corpus(out / "external", 6, seed=99, prefix="ext")
    config = out / "train.toml"
    config.write_text(TOML)
    ds, split = out / "dataset", out / "dataset" / "split.json"

    step("count-pairs", "--fonts", 628)
    step("build-dataset", "--fonts-dir", fonts, "--out", ds, "--size", 32)
    n = len((ds / "fonts.jsonl").read_text().splitlines())
    n_test = max(2, n // 6)
    step("split", "--dataset", ds, "--train", n - 2 * n_test, "--val", n_test, "--test", n_test,
         "--seed", 0)
    step("pairs", "--dataset", ds, "--split", split, "--config", config, "--out", out / "pairs")
    step("train", "--dataset", ds, "--split", split, "--config", config, "--out", out / "run")
    step("eval", "--ckpt", out / "run" / "model.ckpt", "--pairs", out / "pairs" / "test_pairs.jsonl",
         "--out", out / "eval")
    step("report", out / "eval")
    step("pca", "--ckpt", out / "run" / "model.ckpt", "--dataset", ds, "--split", split,
         "--chars", "D", "E", "--fonts", "test", "--out", out / "pca")
    step("gradcam", "--ckpt", out / "run" / "model.ckpt", "--pair-manifest",
         out / "pairs" / "test_pairs.jsonl", "--index", 0, "--out", out / "gradcam")
    if args.fonts_dir is None:
        step("cross-eval", "--ckpt", out / "run" / "model.ckpt", "--fonts-dir", out / "external",
             "--max-pairs", 1000, "--out", out / "cross")
    step("folds", "--dataset", ds, "--k", 3, "--ratio", "5:1")
    step("cv", "--dataset", ds, "--folds", ds / "folds.json", "--k", 3, "--config", config,
         "--epochs", 2, "--out", out / "cv")

    summary = json.loads((out / "eval" / "summary.json").read_text())
    print(f"test accuracy {summary['accuracy']:.3f}; outputs under {out}")


if __name__ == "__main__":
    main()

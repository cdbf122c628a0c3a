"""Train and test at desk scale on a real font corpus, through the CLI.

    python demos/fetch_google_fonts.py --out /root/data/gfonts
    python demos/desk_scale_run.py --data /root/data

Builds ``DATA/gds`` from ``DATA/gfonts`` if needed, splits it into 300 training
fonts, 60 test fonts and the rest for validation, trains with
``demos/desk_train.toml`` into ``DATA/desk_run`` and evaluates on 5,000 balanced
pairs of the test fonts. The acceptance test for this scale reuses the same
checkpoint when its training fonts match the split.
"""
import argparse
import json
from pathlib import Path

from fontpair import cli, raster

HERE = Path(__file__).resolve().parent
CONFIG = HERE / "desk_train.toml"
N_TRAIN, N_TEST, SEED = 300, 60, 0


def step(*argv):
    code = cli.main([*argv, "-v"])
    if code:
        raise SystemExit(code)


def run(data, skip_train=False):
    gds, out = data / "gds", data / "desk_run"
    if not (gds / "fonts.jsonl").exists():
        step("build-dataset", "--fonts-dir", str(data / "gfonts"), "--out", str(gds))
    n_val = len(raster.GlyphDataset(gds).font_ids) - N_TRAIN - N_TEST
    split = out / "split.json"
    out.mkdir(parents=True, exist_ok=True)
    step("split", "--dataset", str(gds), "--train", str(N_TRAIN), "--val", str(n_val),
         "--test", str(N_TEST), "--seed", str(SEED), "--out", str(split))
    if not skip_train:
        step("train", "--dataset", str(gds), "--split", str(split), "--config", str(CONFIG),
             "--seed", str(SEED), "--out", str(out))
    # test pairs use pair_seed + 2, as the pairs subcommand does
    step("pairs", "--dataset", str(gds), "--split", str(split), "--config", str(CONFIG),
         "--max-eval-pairs", "5000", "--out", str(out / "pairs"))
    step("eval", "--ckpt", str(out / "model.ckpt"), "--pairs",
         str(out / "pairs" / "test_pairs.jsonl"), "--out", str(out / "test_eval"))
    report = json.loads((out / "test_eval" / "report.json").read_text())
    print(f"test accuracy {report['accuracy']:.4f} on {report['n_pairs']} pairs")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", type=Path, default=Path("/root/data"))
    ap.add_argument("--skip-train", action="store_true", help="evaluate an existing checkpoint")
    args = ap.parse_args()
    run(args.data, args.skip_train)


if __name__ == "__main__":
    main()

"""Fetch a desk-scale corpus of real fonts from the npm ``@fontsource`` mirror.

Each family contributes one font: its latin 400-normal WOFF file. Families are
drawn with a fixed seed from the ``google-font-metadata`` catalogue, stratified
by category so the corpus mixes serif, sans, display and handwriting styles.

    python demos/fetch_google_fonts.py --out /root/data/gfonts --n 450
"""
import argparse
import json
import random
import subprocess
import tarfile
import tempfile
from pathlib import Path


def npm_pack(name, dest):
    out = subprocess.run(
        ["npm", "pack", name, "--silent"], cwd=dest, capture_output=True, text=True, timeout=180
    )
    if out.returncode != 0:
        raise RuntimeError(out.stderr.strip().splitlines()[-1] if out.stderr else "npm pack failed")
    return Path(dest) / out.stdout.strip().splitlines()[-1]


def catalogue(workdir):
    tgz = npm_pack("google-font-metadata", workdir)
    with tarfile.open(tgz) as tf:
        f = tf.extractfile("package/data/google-fonts-v2.json")
        return json.load(f)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--n", type=int, default=450)
    ap.add_argument("--seed", type=int, default=2020)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        meta = catalogue(tmp)
    eligible = sorted(
        k for k, v in meta.items()
        if "latin" in v.get("subsets", []) and 400 in v.get("weights", []) and "normal" in v.get("styles", [])
    )
    rng = random.Random(args.seed)
    rng.shuffle(eligible)
    by_cat = {}
    for k in eligible:
        by_cat.setdefault(meta[k].get("category", "other"), []).append(k)
    # round-robin over categories keeps monospace/serif from being crowded out
    picked = []
    cats = sorted(by_cat)
    while len(picked) < args.n and any(by_cat.values()):
        for c in cats:
            if by_cat[c] and len(picked) < args.n:
                picked.append(by_cat[c].pop())

    for i, fid in enumerate(picked):
        target = out / meta[fid].get("category", "other") / f"{fid}.woff"
        if target.exists():
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory() as tmp:
            try:
                tgz = npm_pack(f"@fontsource/{fid}", tmp)
                with tarfile.open(tgz) as tf:
                    member = tf.extractfile(f"package/files/{fid}-latin-400-normal.woff")
                    target.write_bytes(member.read())
            except (RuntimeError, KeyError, subprocess.TimeoutExpired) as exc:
                print(f"skip {fid}: {exc}")
                continue
        print(f"[{i + 1}/{len(picked)}] {target}", flush=True)


if __name__ == "__main__":
    main()

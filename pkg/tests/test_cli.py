import json

import pytest

from fontpair import cli, netmodel
from fontpair.testing import make_corpus

TOML = """
[model]
input_size = 16
conv_channels = [2, 2, 3, 3]
fc_sizes = [8, 4, 2]

[train]
batch_size = 32
max_epochs = 3
learning_rate = 0.001

[data]
max_train_pairs = 64
max_eval_pairs = 32
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, synth_fonts):
    root = tmp_path_factory.mktemp("cli")
    (root / "train.toml").write_text(TOML)
    assert run("build-dataset", "--fonts-dir", synth_fonts, "--out", root / "ds", "--size", 16) == 0
    assert run("split", "--dataset", root / "ds", "--train", 7, "--val", 2, "--test", 3, "--seed", 4) == 0
    return root


def test_build_dataset_outputs(workspace):
    ds = workspace / "ds"
    assert len((ds / "fonts.jsonl").read_text().splitlines()) == 12
    assert (ds / "rejected.jsonl").exists()
    meta = json.loads((ds / "run_meta.json").read_text())
    assert meta["status"] == "ok" and meta["command"] == "build-dataset"


def test_split_file(workspace):
    split = json.loads((workspace / "ds" / "split.json").read_text())
    assert (len(split["train_fonts"]), len(split["val_fonts"]), len(split["test_fonts"])) == (7, 2, 3)
    assert split["seed"] == 4


def test_folds(workspace, tmp_path):
    assert run("folds", "--dataset", workspace / "ds", "--k", 4, "--out", tmp_path / "f.json") == 0
    folds = json.loads((tmp_path / "f.json").read_text())["folds"]
    assert [len(f) for f in folds] == [3, 3, 3, 3]


def test_count_pairs(capsys):
    assert run("count-pairs", "--fonts", 628) == 0
    assert "204,100 positives / 325 per font" in capsys.readouterr().out


def test_train_eval_report(workspace, capsys):
    out = workspace / "run"
    code = run("train", "--dataset", workspace / "ds", "--split", workspace / "ds" / "split.json",
               "--config", workspace / "train.toml", "--epochs", 2, "--out", out)
    assert code == 0
    meta = json.loads((out / "run_meta.json").read_text())
    # flag beats file beats default
    assert meta["train"]["max_epochs"] == 2
    assert meta["train"]["batch_size"] == 32
    assert meta["train"]["beta1"] == 0.9
    assert meta["inputs"]["dataset"] and meta["version"]
    ckpt = netmodel.ModelCheckpoint.load(out / "model.ckpt")
    assert ckpt.config.input_size == 16 and ckpt.metadata["train_font_digests"]
    assert len((out / "train_log.csv").read_text().splitlines()) == 3

    assert run("pairs", "--dataset", workspace / "ds", "--split", workspace / "ds" / "split.json",
               "--config", workspace / "train.toml", "--out", workspace / "pairs") == 0
    assert len((workspace / "pairs" / "test_pairs.jsonl").read_text().splitlines()) == 32
    assert run("eval", "--ckpt", out / "model.ckpt", "--pairs", workspace / "pairs" / "test_pairs.jsonl",
               "--out", workspace / "eval") == 0
    for name in ("report.json", "confusion.csv", "charpair_matrix.csv", "ranked_pairs.csv",
                 "predictions.csv", "run_meta.json"):
        assert (workspace / "eval" / name).exists()
    capsys.readouterr()
    assert run("report", workspace / "eval") == 0
    assert "accuracy" in capsys.readouterr().out
    summary = json.loads((workspace / "eval" / "summary.json").read_text())
    assert summary["n_pairs"] == 32 and len(summary["worst_pairs"]) <= 20


def test_pca_and_gradcam(workspace):
    if not (workspace / "run" / "model.ckpt").exists():
        pytest.skip("needs the trained checkpoint")
    ckpt = workspace / "run" / "model.ckpt"
    assert run("pca", "--ckpt", ckpt, "--dataset", workspace / "ds", "--split",
               workspace / "ds" / "split.json", "--chars", "D", "E", "--out", workspace / "pca") == 0
    assert (workspace / "pca" / "pca_points.csv").exists()
    assert (workspace / "pca" / "pca_scatter.png").exists()
    assert run("gradcam", "--ckpt", ckpt, "--pair-manifest", workspace / "pairs" / "test_pairs.jsonl",
               "--index", 3, "--target", "same", "--out", workspace / "cam") == 0
    meta = json.loads((workspace / "cam" / "gradcam_meta.json").read_text())
    assert meta["target_class"] == "same" and meta["index"] == 3
    assert len(list((workspace / "cam").glob("*.png"))) == 2


def test_cross_eval(workspace, tmp_path):
    if not (workspace / "run" / "model.ckpt").exists():
        pytest.skip("needs the trained checkpoint")
    make_corpus(tmp_path / "other", 2, seed=123, prefix="other")
    assert run("cross-eval", "--ckpt", workspace / "run" / "model.ckpt", "--fonts-dir", tmp_path / "other",
               "--out", tmp_path / "xe") == 0
    rep = json.loads((tmp_path / "xe" / "report.json").read_text())
    assert rep["n_pairs"] == 2 * 650


def test_cv(workspace, tmp_path):
    assert run("folds", "--dataset", workspace / "ds", "--k", 3, "--ratio", "3:1",
               "--out", tmp_path / "folds.json") == 0
    assert run("cv", "--dataset", workspace / "ds", "--folds", tmp_path / "folds.json",
               "--config", workspace / "train.toml", "--epochs", 1, "--out", tmp_path / "cv") == 0
    summary = json.loads((tmp_path / "cv" / "cv_summary.json").read_text())
    assert len(summary["accuracies"]) == 3
    assert (tmp_path / "cv" / "fold2" / "report.json").exists()


def test_domain_error_exit_code(tmp_path, capsys):
    assert run("report", tmp_path) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err == [f"error cli.MissingReport: no report.json in {tmp_path}"]
    assert json.loads((tmp_path / "run_meta.json").read_text())["status"] == "cli.MissingReport"


def test_split_too_big(workspace, tmp_path, capsys):
    assert run("split", "--dataset", workspace / "ds", "--train", 10, "--val", 5, "--test", 5,
               "--out", tmp_path / "s.json") == 1
    assert "pairgen.SizeMismatch" in capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        run("split", "--dataset")
    assert info.value.code == 2


def test_seed_sources(monkeypatch, capsys):
    monkeypatch.setenv("FONTPAIR_SEED", "17")
    run("defaults")
    assert json.loads(capsys.readouterr().out)["seed"] == 17
    run("--seed", "3", "defaults")
    assert json.loads(capsys.readouterr().out)["seed"] == 3
    run("defaults", "--seed", "4")
    assert json.loads(capsys.readouterr().out)["seed"] == 4

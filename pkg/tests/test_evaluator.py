import csv
import json
import shutil

import numpy as np
import pytest

from fontpair import evaluator, netmodel, pairgen
from fontpair.errors import EmptyCorpus, EmptyDataset, LeakageDetected
from fontpair.raster import LETTERS
from fontpair.testing import make_corpus


def scripted(n=90, seed=0):
    rng = np.random.default_rng(seed)
    fonts = [f"f{i}" for i in range(6)]
    pairs = []
    for _ in range(n):
        a, b = sorted(rng.choice(list(LETTERS), 2, replace=False))
        fa = str(rng.choice(fonts))
        same = rng.random() < 0.5
        fb = fa if same else str(rng.choice([f for f in fonts if f != fa]))
        pairs.append(pairgen.PairSample(str(a), str(b), fa, fb, int(same)))
    return pairs, rng.integers(0, 2, n)


def brute(pairs, pred):
    conf = [[0, 0], [0, 0]]
    errs, tots = {}, {}
    per_font = {}
    for p, y in zip(pairs, pred):
        conf[0 if p.label else 1][0 if y else 1] += 1
        key = (p.char_a, p.char_b)
        tots[key] = tots.get(key, 0) + 1
        errs[key] = errs.get(key, 0) + int(y != p.label)
        if p.label:
            per_font[p.font_a] = per_font.get(p.font_a, 0) + int(y != p.label)
    return conf, errs, tots, per_font


def test_matches_brute_force():
    pairs, pred = scripted()
    rep = evaluator.build_report(pairs, pred)
    conf, errs, tots, per_font = brute(pairs, pred)
    assert rep.confusion.tolist() == conf
    assert rep.accuracy == (conf[0][0] + conf[1][1]) / len(pairs)
    for i, a in enumerate(LETTERS):
        for j, b in enumerate(LETTERS):
            key = (min(a, b), max(a, b))
            assert rep.charpair_totals[i, j] == (tots.get(key, 0) if a != b else 0)
            assert rep.charpair_errors[i, j] == (errs.get(key, 0) if a != b else 0)
    assert rep.per_font_errors == per_font
    ranked = sorted(((f"{a}-{b}", 1 - errs[(a, b)] / tots[(a, b)]) for a, b in tots),
                    key=lambda r: (-r[1], r[0]))
    assert [(r["pair"], r["accuracy"]) for r in rep.ranked_pairs] == ranked
    np.testing.assert_array_equal(rep.charpair_errors_same + rep.charpair_errors_different,
                                  rep.charpair_errors)


def test_table_confusion_arithmetic():
    c = np.array([[196_868, 7_232], [24_331, 179_769]])
    assert evaluator.accuracy_from_confusion(c) == pytest.approx(0.92268, abs=5e-5)
    assert c.sum(axis=1).tolist() == [204_100, 204_100]


def test_decide_tie_is_different():
    assert evaluator.decide([0.5, 0.5000001, 0.1]).tolist() == [0, 1, 0]


def test_rank_ties_alphabetical():
    pairs = [pairgen.PairSample(a, b, "x", "x", 1) for a, b in [("B", "C"), ("A", "D"), ("A", "C")]]
    rep = evaluator.build_report(pairs, [1, 1, 0])
    worst, best = evaluator.rank_charpairs(rep, 2)
    assert worst == [("A-C", 0.0), ("A-D", 1.0)]
    assert best == [("A-D", 1.0), ("B-C", 1.0)]


def test_empty():
    with pytest.raises(EmptyDataset):
        evaluator.build_report([], [])


def test_save_load(tmp_path):
    pairs, pred = scripted(40, seed=3)
    rep = evaluator.build_report(pairs, pred)
    rep.save(tmp_path)
    back = evaluator.EvalReport.load(tmp_path)
    assert back.to_dict() == json.loads(json.dumps(rep.to_dict()))
    rows = list(csv.reader(open(tmp_path / "charpair_matrix.csv")))
    assert rows[0][1:] == list(LETTERS) and len(rows) == 27
    conf = list(csv.reader(open(tmp_path / "confusion.csv")))
    assert [int(x) for x in conf[1][1:]] == rep.confusion[0].tolist()
    ranked = list(csv.DictReader(open(tmp_path / "ranked_pairs.csv")))
    assert ranked[0]["pair"] == rep.ranked_pairs[0]["pair"]


def test_symmetrize_is_order_free(synth_dataset):
    model = netmodel.init_params(netmodel.ModelConfig(input_size=16, conv_channels=(2, 2, 3, 3),
                                                      fc_sizes=(8, 4, 2)), 1)
    pairs = pairgen.balanced_pairs(synth_dataset.font_ids[:3], 0, synth_dataset, 20)
    swapped = [pairgen.PairSample(p.char_a, p.char_b, p.font_b, p.font_a, p.label,
                                  p.image_b_path, p.image_a_path) for p in pairs]
    p1 = evaluator.predict_proba(model, pairs, symmetrize=True)
    p2 = evaluator.predict_proba(model, swapped, symmetrize=True)
    np.testing.assert_allclose(p1, p2, atol=1e-6)


@pytest.fixture(scope="module")
def tiny_ckpt(synth_dataset):
    cfg = netmodel.ModelConfig(input_size=16, conv_channels=(2, 2, 3, 3), fc_sizes=(8, 4, 2))
    m = netmodel.init_params(cfg, 0)
    m.metadata["train_font_digests"] = sorted(synth_dataset.digests(synth_dataset.font_ids[:6]))
    return m


def test_cross_evaluate_structure(tiny_ckpt, tmp_path):
    make_corpus(tmp_path / "ext", 3, seed=77, prefix="ext")
    rep = evaluator.cross_evaluate(tiny_ckpt, tmp_path / "ext", seed=0, out_dir=tmp_path / "ds")
    assert rep.n_pairs == 2 * 325 * 3
    assert rep.extra["n_positive"] == rep.extra["n_negative"] == 975
    assert rep.confusion.sum(axis=1).tolist() == [975, 975]


def test_cross_evaluate_leakage(tiny_ckpt, synth_fonts, tmp_path):
    shutil.copytree(synth_fonts, tmp_path / "ext")
    with pytest.raises(LeakageDetected):
        evaluator.cross_evaluate(tiny_ckpt, tmp_path / "ext", seed=0)


def test_cross_evaluate_empty(tiny_ckpt, tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyCorpus):
        evaluator.cross_evaluate(tiny_ckpt, tmp_path / "empty", seed=0)

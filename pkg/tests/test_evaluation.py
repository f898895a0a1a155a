import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ppgvc import pipeline
from ppgvc.errors import DimensionMismatch, FrameCountMismatch, MissingReference
from ppgvc.evaluation import (compare, evaluate_corpus, evaluate_pairs, f0_rmse, format_report, mcd, mcd_frames,
                              vuv_error, write_report)
from ppgvc.features import SpeechParams

K = 10 / math.log(10)


def params(T=10, f0=200.0, voiced=True, mc=None):
    mc = np.zeros((T, 4)) if mc is None else mc
    return SpeechParams(mc, np.full(T, np.log(f0)), np.full(T, voiced), np.zeros((T, 1)))


def test_mcd_identity_and_closed_form():
    a = np.random.default_rng(0).standard_normal((5, 6))
    assert mcd(a, a) == 0.0
    b = np.zeros((1, 6))
    c = b.copy()
    c[0, 3] = 0.25
    assert mcd(b, c) == pytest.approx(K * math.sqrt(2) * 0.25)
    c0 = b.copy()
    c0[0, 0] = 9.0
    assert mcd(b, c0) == 0.0


def test_mcd_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        mcd(np.zeros((2, 3)), np.zeros((2, 4)))


# values on a 1/8 grid: squaring tiny differences would otherwise underflow to zero
mats = arrays(np.float64, (3, 5), elements=st.integers(-40, 40).map(lambda v: v / 8))


@settings(max_examples=60, deadline=None)
@given(mats, mats, mats)
def test_mcd_is_a_metric_per_frame(a, b, c):
    ab, ba, ac, cb = mcd_frames(a, b), mcd_frames(b, a), mcd_frames(a, c), mcd_frames(c, b)
    assert np.allclose(ab, ba)
    assert np.all(ab <= ac + cb + 1e-9)
    assert np.all(ab >= 0)
    same = np.all(a[:, 1:] == b[:, 1:], axis=1)
    assert np.all((ab == 0) == same)


def test_f0_rmse_examples():
    assert f0_rmse(params(), params()) == (0.0, False)
    r, flag = f0_rmse(params(f0=200), params(f0=210))
    assert r == pytest.approx(10.0) and not flag
    assert f0_rmse(params(voiced=False), params()) == (0.0, True)
    with pytest.raises(FrameCountMismatch):
        f0_rmse(params(10), params(9))


def test_vuv_error_examples():
    a = params(4)
    assert vuv_error(a, a) == 0.0
    assert vuv_error(params(4, voiced=True), params(4, voiced=False)) == 1.0
    half = SpeechParams(np.zeros((4, 4)), np.zeros(4), [1, 1, 0, 0], np.zeros((4, 1)))
    assert vuv_error(a, half) == 0.5
    with pytest.raises(FrameCountMismatch):
        vuv_error(params(3), params(4))


def test_compare_slack():
    assert compare(params(10), params(12)).frames == 10
    with pytest.raises(FrameCountMismatch):
        compare(params(10), params(13))


def _corpus(seed, n=5):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(rng.integers(5, 15))
        mk = lambda: SpeechParams(rng.standard_normal((T, 4)), np.log(rng.uniform(100, 200, T)),
                                  rng.random(T) > 0.3, np.zeros((T, 1)))
        out.append((f"u{i}", mk(), mk()))
    return out


def test_report_pooling():
    pairs = _corpus(0)
    rep = evaluate_pairs(pairs)
    frames = [u.frames for u in rep.utterances]
    assert rep.frames == sum(frames)
    assert rep.mcd == pytest.approx(sum(u.mcd * u.frames for u in rep.utterances) / rep.frames)
    allp = np.concatenate([p.mcep for _, p, _ in pairs])
    allr = np.concatenate([r.mcep for _, _, r in pairs])
    assert rep.mcd == pytest.approx(mcd(allp, allr))
    assert 0 <= rep.vuv_error <= 1 and rep.mcd >= 0
    assert len(rep.gv_ratio) == 4


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(5)))
def test_reordering_invariance(perm):
    pairs = _corpus(1)
    a = evaluate_pairs(pairs)
    b = evaluate_pairs([pairs[i] for i in perm])
    assert a.as_dict() == b.as_dict()


def test_identical_corpora_give_zero(tmp_path):
    pairs = [(u, r, r) for u, _, r in _corpus(2)]
    rep = evaluate_pairs(pairs)
    assert rep.mcd == 0 and rep.f0_rmse == 0 and rep.vuv_error == 0
    assert np.allclose(rep.gv_ratio, 1.0)


def _manifest(tmp_path, name, items):
    recs = []
    for uid, p in items:
        path = tmp_path / f"{name}_{uid}.prm"
        pipeline.save_params(path, p)
        recs.append(pipeline.UtteranceRecord(uid, None, {}, str(path)))
    return pipeline.CorpusManifest(recs)


def test_evaluate_corpus_and_missing_reference(tmp_path):
    pairs = _corpus(3, 3)
    pred = _manifest(tmp_path, "p", [(u, p) for u, p, _ in pairs])
    ref = _manifest(tmp_path, "r", [(u, r) for u, _, r in pairs])
    load = lambda rec: pipeline.load_params(rec.params_path)[0]
    rep = evaluate_corpus(pred, ref, load)
    assert [u.id for u in rep.utterances] == ["u0", "u1", "u2"]
    assert evaluate_corpus(ref, ref, load).mcd == 0.0
    with pytest.raises(MissingReference):
        evaluate_corpus(pred, ref.subset(["u0"]), load)


def test_write_report(tmp_path):
    rep = evaluate_pairs(_corpus(4, 2))
    txt, jl = write_report(rep, str(tmp_path / "rep"))
    lines = open(jl).read().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[-1])["id"] == "__corpus__"
    assert json.loads(lines[0])["id"] == "u0"
    assert open(txt).read() == format_report(rep)
    assert "ALL" in format_report(rep)

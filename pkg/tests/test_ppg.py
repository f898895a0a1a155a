import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppgvc.errors import (DuplicateLanguage, EmptyInput, FrameCountMismatch, IndexOutOfRange, InvalidValue,
                          LanguageMismatch, ParseError)
from ppgvc.features import SpeechParams
from ppgvc.ppg import (FULL_DIMS, MultiPpg, PpgMatrix, align_to_params, context_stack, load_ppg,
                       merge_multilingual, oracle_ppg, write_ppg)


def rand_ppg(lang, T, D, seed=0):
    return PpgMatrix(np.random.default_rng(seed).random((T, D)).astype(np.float32), lang)


def test_full_dims():
    assert FULL_DIMS == {"ja": 5383, "zh": 5996, "en": 5871}


def test_binary_round_trip_full_width(tmp_path):
    m = rand_ppg("ja", 100, 5383)
    write_ppg(tmp_path / "a.ppg", m)
    back = load_ppg(tmp_path / "a.ppg", "ja")
    assert back.values.shape == (100, 5383) and back.language == "ja"
    assert np.array_equal(back.values, m.values)


def test_text_variant(tmp_path):
    m = rand_ppg("en", 5, 4)
    write_ppg(tmp_path / "a.txt", m, text=True)
    assert np.array_equal(load_ppg(tmp_path / "a.txt", "en").values, m.values)


def test_text_wrong_width(tmp_path):
    (tmp_path / "a.txt").write_text("2 3 ja\n1 2 3\n1 2\n")
    with pytest.raises(ParseError):
        load_ppg(tmp_path / "a.txt")


def test_text_nan(tmp_path):
    (tmp_path / "a.txt").write_text("1 2 ja\nnan 1\n")
    with pytest.raises(InvalidValue):
        load_ppg(tmp_path / "a.txt")


def test_binary_nan(tmp_path):
    m = rand_ppg("ja", 2, 3)
    write_ppg(tmp_path / "a.ppg", m)
    buf = bytearray((tmp_path / "a.ppg").read_bytes())
    buf[-4:] = np.array([np.nan], "<f4").tobytes()
    (tmp_path / "a.ppg").write_bytes(bytes(buf))
    with pytest.raises(InvalidValue):
        load_ppg(tmp_path / "a.ppg")


@pytest.mark.parametrize("mutate", [lambda b: b[:3], lambda b: b"XXXX" + b[4:], lambda b: b[:-1]])
def test_binary_malformed(tmp_path, mutate):
    write_ppg(tmp_path / "a.ppg", rand_ppg("ja", 2, 3))
    (tmp_path / "a.ppg").write_bytes(mutate((tmp_path / "a.ppg").read_bytes()))
    with pytest.raises(ParseError):
        load_ppg(tmp_path / "a.ppg")


def test_language_mismatch(tmp_path):
    write_ppg(tmp_path / "a.ppg", rand_ppg("zh", 2, 3))
    with pytest.raises(LanguageMismatch):
        load_ppg(tmp_path / "a.ppg", "ja")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2 ** 31))
def test_round_trip_bit_exact(tmp_path_factory, T, D, seed):
    v = np.random.default_rng(seed).standard_normal((T, D)).astype(np.float32) * 1e3
    p = tmp_path_factory.mktemp("ppg") / "x.ppg"
    write_ppg(p, PpgMatrix(v, "en"))
    assert np.array_equal(load_ppg(p).values, v)


def test_merge_full_shape_any_order():
    a, b, c = (rand_ppg(lang, 100, FULL_DIMS[lang]) for lang in ("en", "ja", "zh"))
    m = merge_multilingual([a, b, c])
    assert m.values.shape == (100, 17250)
    assert m.segments == (("ja", 5383), ("zh", 5996), ("en", 5871))


def test_merge_single_identity():
    a = rand_ppg("ja", 50, 64)
    m = merge_multilingual([a])
    assert m.values.shape == (50, 64) and np.array_equal(m.values, a.values)


def test_merge_errors():
    with pytest.raises(FrameCountMismatch):
        merge_multilingual([rand_ppg("ja", 100, 64), rand_ppg("en", 97, 64)], 2)
    with pytest.raises(DuplicateLanguage):
        merge_multilingual([rand_ppg("ja", 10, 4), rand_ppg("ja", 10, 4)])
    with pytest.raises(EmptyInput):
        merge_multilingual([])


@settings(max_examples=30, deadline=None)
@given(st.permutations(["ja", "zh", "en"]), st.lists(st.integers(8, 10), min_size=3, max_size=3),
       st.lists(st.integers(1, 5), min_size=3, max_size=3))
def test_merge_split_recovers_and_order_insensitive(order, lengths, dims):
    mats = {lang: rand_ppg(lang, t, d, seed=i) for i, (lang, t, d) in enumerate(zip(["ja", "zh", "en"], lengths, dims))}
    m1 = merge_multilingual([mats[k] for k in order])
    m2 = merge_multilingual([mats[k] for k in ("ja", "zh", "en")])
    assert np.array_equal(m1.values, m2.values) and m1.segments == m2.segments
    T = min(lengths)
    for lang, block in m1.split().items():
        assert np.array_equal(block, mats[lang].values[:T])


def test_oracle_basic():
    m = oracle_ppg([0, 0, 1], 4, 10)
    assert m.values.shape == (3, 4)
    assert m.values.argmax(1).tolist() == [0, 0, 1]
    assert np.allclose(m.values.sum(1), 1, atol=1e-6)


@pytest.mark.parametrize("D", [4, 64, 5383])
def test_oracle_sharp_limit_matches_closed_form(D):
    # one-hot lift 1.0, perturbations in +-0.25: the winning logit margin is at least 0.5
    s = 50.0
    bound = 1.0 / (1.0 + (D - 1) * np.exp(-0.5 * s))
    m = oracle_ppg(np.arange(min(D, 64)), D, s).values
    assert m.max(1).min() >= bound >= 0.999


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=1, max_size=30), st.floats(5.0, 60.0))
def test_oracle_rows_are_distributions(seq, sharp):
    m = oracle_ppg(seq, 16, sharp).values
    assert np.all(m >= 0) and np.allclose(m.sum(1), 1, atol=1e-6)
    assert m.argmax(1).tolist() == seq
    assert np.array_equal(m, oracle_ppg(seq, 16, sharp).values)


def test_oracle_out_of_range():
    with pytest.raises(IndexOutOfRange):
        oracle_ppg([7], 4)


def test_context_stack():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(context_stack(x, 0), x)
    s = context_stack(x, 1)
    assert s.shape == (3, 6)
    assert s[0].tolist() == [0, 1, 0, 1, 2, 3]
    assert s[2].tolist() == [2, 3, 4, 5, 4, 5]


def test_context_stack_wide():
    m = MultiPpg(np.zeros((2, 17250)), (("ja", 5383), ("zh", 5996), ("en", 5871)))
    assert context_stack(m, 2).shape == (2, 86250)


def _params(T):
    return SpeechParams(np.zeros((T, 3)), np.zeros(T), np.zeros(T), np.zeros((T, 1)))


def test_align_to_params():
    m = MultiPpg(np.zeros((100, 4)), (("ja", 4),))
    a, p = align_to_params(m, _params(99))
    assert a.n_frames == p.n_frames == 99
    a, p = align_to_params(m, _params(100))
    assert a.n_frames == 100
    with pytest.raises(FrameCountMismatch):
        align_to_params(m, _params(90))

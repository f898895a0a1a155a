import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppgvc.errors import FrameCountMismatch, InvalidConfig
from ppgvc.evaluation import mcd
from ppgvc.experiments import synthetic_vowel, vocoder_round_trip
from ppgvc.features import AnalysisConfig, SpeechParams, analyze, logspec_to_mcep
from ppgvc.vocoder import (SynthesisConfig, generate_excitation, mcep_to_spectrum, noise_spectra, synthesize,
                           synthesize_with_info)

CFG = SynthesisConfig()
DIM = 40


def flat_params(T, c0=-3.0, voiced=False, f0=150.0, bap=0.0):
    mc = np.zeros((T, DIM))
    mc[:, 0] = c0
    return SpeechParams(mc, np.full(T, np.log(f0)), np.full(T, voiced), np.full((T, 1), bap))


def test_config_checks():
    with pytest.raises(InvalidConfig):
        SynthesisConfig(fft_size=1000)
    with pytest.raises(InvalidConfig):
        SynthesisConfig(fft_size=512)     # below four hops of 160 samples


def test_unvoiced_excitation_is_noise():
    T = 12
    exc = generate_excitation(np.zeros(T), np.zeros(T, bool), np.zeros((T, 1)), CFG)
    assert np.array_equal(exc, noise_spectra(T, CFG))


def test_bap_zero_db_is_pure_noise_when_voiced():
    T = 12
    exc = generate_excitation(np.full(T, np.log(200)), np.ones(T, bool), np.zeros((T, 1)), CFG)
    assert np.allclose(exc, noise_spectra(T, CFG))


def test_bap_minus_20_gives_noise_weight_tenth():
    T = 12
    lf0, vuv = np.full(T, np.log(200)), np.ones(T, bool)
    full_noise = noise_spectra(T, CFG)
    e20 = generate_excitation(lf0, vuv, np.full((T, 1), -20.0), CFG)
    e_inf = generate_excitation(lf0, vuv, np.full((T, 1), -1e6), CFG)  # pulses only
    a = 0.1
    expected = np.sqrt(1 - a * a) * e_inf + a * full_noise
    assert np.allclose(e20, expected)


def test_excitation_stream_mismatch():
    with pytest.raises(FrameCountMismatch):
        generate_excitation(np.zeros(3), np.zeros(2, bool), np.zeros((3, 1)), CFG)


def test_flat_mcep_gives_constant_envelope():
    mc = np.zeros(DIM)
    mc[0] = 0.7
    env = mcep_to_spectrum(mc, CFG)
    assert env.shape == (CFG.n_bins,) and np.allclose(env, np.exp(0.7))
    mc[0] = np.log(1e-10)
    assert np.allclose(mcep_to_spectrum(mc, CFG), 1e-10)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=8))
def test_envelope_round_trip_smooth(coefs):
    w = np.linspace(0, np.pi, CFG.n_bins)
    logamp = sum(c * np.cos((i + 1) * w) / (i + 1) for i, c in enumerate(coefs))
    mc = logspec_to_mcep(logamp, DIM - 1, CFG.warp_alpha)
    back = np.log(mcep_to_spectrum(mc, CFG))
    assert np.all(back > -np.inf)
    assert np.mean(np.abs(back - logamp)) < 0.12


def test_empty_params():
    p = SpeechParams(np.zeros((0, DIM)), np.zeros(0), np.zeros(0), np.zeros((0, 1)))
    assert len(synthesize(p, CFG)) == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 60), st.booleans())
def test_length_law(T, voiced):
    assert len(synthesize(flat_params(T, voiced=voiced), CFG)) == T * 160


def test_length_law_other_rate():
    cfg = SynthesisConfig(sample_rate=48000, fft_size=4096)
    assert len(synthesize(flat_params(7), cfg)) == 7 * 480


def test_deterministic_and_seeded():
    p = analyze(synthetic_vowel(180, 0.3))
    a, b = synthesize(p, CFG), synthesize(p, CFG)
    assert np.array_equal(a.samples, b.samples)
    c = synthesize(p, SynthesisConfig(seed=5))
    assert not np.array_equal(a.samples, c.samples)


def test_silence_in_silence_out():
    p = flat_params(100, c0=np.log(1e-10))
    y = synthesize(p, CFG).samples
    assert 20 * np.log10(np.sqrt(np.mean(y ** 2)) + 1e-300) < -60


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_unvoiced_has_no_pitch_peak(seed):
    # measured maximum normalised autocorrelation 0.016-0.023 over lags 32..267
    y = synthesize(flat_params(100), SynthesisConfig(seed=seed)).samples
    y = y - y.mean()
    r = np.correlate(y, y, "full")[len(y) - 1:]
    r /= r[0]
    assert r[32:268].max() < 0.3


def test_peak_normalisation_only_when_needed():
    y, info = synthesize_with_info(flat_params(20, c0=4.0), CFG)
    assert info["normalized"] and np.max(np.abs(y.samples)) <= 0.99 + 1e-12
    _, info = synthesize_with_info(flat_params(20, c0=-4.0), CFG)
    assert not info["normalized"] and info["gain"] == 1.0


@pytest.mark.parametrize("f0", [150, 220, 300])
def test_round_trip_vowels(f0):
    # measured: F0 RMSE below 0.08 Hz, MCD 0.61-0.82 dB
    r = vocoder_round_trip(f0)
    assert r.f0_rmse < 5.0 and r.mcd < 2.5


def test_round_trip_stability():
    cfg = AnalysisConfig()
    a = synthesize(analyze(synthetic_vowel(220), cfg))
    b = synthesize(analyze(a, cfg))
    c = synthesize(analyze(b, cfg))
    assert mcd(analyze(b, cfg).mcep, analyze(c, cfg).mcep) < 1.0


def test_output_psd_follows_envelope():
    # unvoiced flat envelope at level e^c0: output variance should be close to e^(2 c0)
    c0 = np.log(0.05)
    y = synthesize(flat_params(400, c0=c0), CFG).samples
    assert np.var(y[400:-400]) == pytest.approx(np.exp(2 * c0), rel=0.1)

"""Seeded reference experiments shared by the acceptance tests, the CLI and the benchmarks.

Each function is deterministic in its arguments and returns plain numbers, so
the same run can be repeated from a test, a script or an interactive session.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import adversarial, evaluation, neural, pipeline
from .features import AnalysisConfig, SpeechParams, analyze
from .neural import NetworkConfig, OutputLayout, TrainHyper
from .ppg import oracle_ppg, write_ppg
from .audio import Waveform, read_wav
from .vocoder import SynthesisConfig, synthesize

# ---------------------------------------------------------------------------
# vocoder round trip on synthetic vowels

VOWEL_FORMANTS = ((700.0, 80.0), (1220.0, 90.0), (2600.0, 120.0))


def synthetic_vowel(f0: float, seconds: float = 1.0, formants=VOWEL_FORMANTS, fs: int = 16000,
                    peak: float = 0.3) -> Waveform:
    """Impulse train at ``f0`` through a cascade of two-pole resonators, scaled to ``peak``."""
    n = int(round(seconds * fs))
    x = np.zeros(n)
    epochs = np.round(np.arange(0.0, n, fs / f0)).astype(int)
    x[epochs[epochs < n]] = 1.0
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / fs)
        x = lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(2 * np.pi * freq / fs), r * r], x)
    return Waveform(peak * x / np.abs(x).max(), fs)


@dataclass
class RoundTrip:
    f0: float
    f0_rmse: float
    mcd: float
    samples: int
    frames: int
    seconds: float


def vocoder_round_trip(f0: float, seconds: float = 1.0, analysis: AnalysisConfig = AnalysisConfig(),
                       seed: int = 0) -> RoundTrip:
    """analyze -> synthesize -> analyze on a synthetic vowel; metrics compare the two analyses."""
    p1 = analyze(synthetic_vowel(f0, seconds, fs=analysis.sample_rate), analysis)
    synth = SynthesisConfig(analysis.sample_rate, analysis.frame_shift_ms, analysis.fft_size,
                            analysis.warp_alpha, analysis.spectral_floor, seed)
    t0 = time.perf_counter()
    y = synthesize(p1, synth)
    dt = time.perf_counter() - t0
    p2 = analyze(y, analysis)
    m = evaluation.compare(p2, p1, f"vowel{f0:g}", slack=0)
    return RoundTrip(f0, m.f0_rmse, m.mcd, len(y), p1.n_frames, dt)


def synthesis_rtf(seconds: float = 5.0, f0: float = 180.0, repeats: int = 3) -> float:
    """Best-of-``repeats`` synthesis time divided by the audio duration."""
    p = analyze(synthetic_vowel(f0, seconds))
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        synthesize(p)
        best = min(best, time.perf_counter() - t0)
    return best / seconds


# ---------------------------------------------------------------------------
# oracle end-to-end run

ORACLE_HIDDEN = (128,) * 6


@dataclass
class OracleRun:
    checkpoint: neural.Checkpoint
    history: list
    report: evaluation.EvalReport
    corpus_dir: str


def oracle_reference_run(out_dir, seed: int = 0, n_utts: int = 20, heldout: int = 4, dims=(64, 64, 64),
                         epochs: int = 40, hidden=ORACLE_HIDDEN) -> OracleRun:
    """Generate the oracle corpus, train on analysed wavs, convert held-out utterances, score vs ground truth."""
    pipeline.make_oracle_corpus(out_dir, n_utts, dims=dims, seed=seed, heldout=heldout)
    train = pipeline.load_manifest(os.path.join(out_dir, "train.tsv"))
    held = pipeline.load_manifest(os.path.join(out_dir, "heldout.tsv"))
    truth = pipeline.load_manifest(os.path.join(out_dir, "truth.tsv"))
    ck, history = pipeline.train_vc(train, spec=pipeline.ModelSpec(hidden=tuple(hidden), context_width=2),
                                    hyper=TrainHyper(epochs=epochs), cache_dir=os.path.join(out_dir, "cache"))
    ref = {r.id: r for r in truth.entries}
    pairs = [(r.id, pipeline.convert_utterance(ck, r).params, pipeline.load_params(ref[r.id].params_path)[0])
             for r in held.entries]
    return OracleRun(ck, history, evaluation.evaluate_pairs(pairs), out_dir)


# ---------------------------------------------------------------------------
# converting vocoded (TTS-like) input with a model trained on recorded speech


@dataclass
class MismatchResult:
    clean_mcd: float
    resynth_mcd: float
    per_utterance: list

    @property
    def margin(self) -> float:
        return self.resynth_mcd - self.clean_mcd


def _write_ppgs(ppgs: dict, stem) -> dict:
    paths = {}
    for lang, m in ppgs.items():
        paths[lang] = f"{stem}.{lang}.ppg"
        write_ppg(paths[lang], m)
    return paths


def tts_mismatch(run: OracleRun, work_dir=None, synth_seed: int = 12345, confidence: float = 0.9) -> MismatchResult:
    """Compare conversion of clean held-out speech with conversion of its vocoder resynthesis.

    PPGs for both inputs come from a :class:`pipeline.TemplateRecognizer`
    fitted on the training wavs, so the resynthesized input reaches the
    model only through the recognizer, as TTS output would.  MCD is measured
    against the ground-truth parameters of each held-out utterance.
    """
    d = run.corpus_dir
    work_dir = work_dir or os.path.join(d, "tts_mismatch")
    os.makedirs(work_dir, exist_ok=True)
    inv = pipeline.load_inventory(d)
    align = pipeline.load_alignments(d)
    analysis = pipeline.checkpoint_analysis(run.checkpoint)
    train = pipeline.load_manifest(os.path.join(d, "train.tsv"))
    held = pipeline.load_manifest(os.path.join(d, "heldout.tsv"))
    truth = {r.id: r for r in pipeline.load_manifest(os.path.join(d, "truth.tsv")).entries}
    rec = pipeline.TemplateRecognizer.fit([read_wav(r.wav_path, analysis.sample_rate) for r in train.entries],
                                          [align[r.id] for r in train.entries], inv.n_phones, analysis,
                                          confidence)
    languages = run.checkpoint.meta["languages"]
    synth = SynthesisConfig(analysis.sample_rate, analysis.frame_shift_ms, analysis.fft_size,
                            analysis.warp_alpha, analysis.spectral_floor, seed=synth_seed)
    clean_pairs, tts_pairs, rows = [], [], []
    for r in held.entries:
        clean = read_wav(r.wav_path, analysis.sample_rate)
        clean_ppg = _write_ppgs(rec.ppgs(clean, inv, languages), os.path.join(work_dir, f"{r.id}.clean"))
        out_clean = pipeline.convert_utterance(run.checkpoint, pipeline.UtteranceRecord(r.id, None, clean_ppg),
                                               wave=clean)
        tts = synthesize(analyze(clean, analysis), synth)
        tts_ppg = _write_ppgs(rec.ppgs(tts, inv, languages), os.path.join(work_dir, f"{r.id}.tts"))
        out_tts = pipeline.postprocess_tts(tts, tts_ppg, run.checkpoint, uid=r.id)
        ref = pipeline.load_params(truth[r.id].params_path)[0]
        clean_pairs.append((r.id, out_clean.params, ref))
        tts_pairs.append((r.id, out_tts.params, ref))
        rows.append((r.id, evaluation.compare(out_clean.params, ref, r.id).mcd,
                     evaluation.compare(out_tts.params, ref, r.id).mcd))
    return MismatchResult(evaluation.evaluate_pairs(clean_pairs).mcd, evaluation.evaluate_pairs(tts_pairs).mcd, rows)


# ---------------------------------------------------------------------------
# prosody skew: does the discriminator pull generated F0 contours toward its real data?

SKEW_DIM = 16
SKEW_FRAMES = 64
SKEW_MCEP = 5


def _skew_utterance(rng, rising: bool):
    T = SKEW_FRAMES
    body = T * 3 // 4
    states = list(rng.integers(0, 12, size=body // 4).repeat(4))[:body]
    states += [12] * 4 + [13] * 4 + [14] * 4 + [15] * 4
    states = np.array(states[:T])
    x = oracle_ppg(states, SKEW_DIM, 10.0).values.astype(np.float64)
    lf0 = np.full(T, np.log(180.0) + 0.05 * rng.standard_normal()) + 0.05 * np.sin(np.arange(T) / 5.0)
    q = T - body
    lf0[-q:] += np.linspace(0.0, 0.3, q) * (1.0 if rising else -1.0)
    mcep = 0.5 * np.stack([np.sin(states * (k + 1)) for k in range(SKEW_MCEP)], axis=1)
    return x, SpeechParams(mcep, lf0, np.ones(T, bool), np.full((T, 1), -20.0))


def prosody_skew_data(seed: int = 0, n: int = 24):
    """Generator pairs with falling utterance-final F0 and a real corpus with rising final F0.

    The inputs carry no information about the final contour beyond the fixed
    final states, so MSE training learns the falling contour of its own
    targets; only the discriminator knows about the rising one.
    """
    rng = np.random.default_rng(seed)
    gen = [_skew_utterance(rng, False) for _ in range(n)]
    real = [_skew_utterance(rng, True)[1] for _ in range(n)]
    return gen, real


def final_quarter_slope(lf0) -> float:
    """Least-squares slope of log-F0 per frame over the last quarter of an utterance."""
    lf0 = np.asarray(lf0, dtype=np.float64)
    q = max(2, lf0.shape[0] // 4)
    return float(np.polyfit(np.arange(q), lf0[-q:], 1)[0])


SKEW_GAN = dict(window_frames=24, disc_steps=2, windows_per_step=16, disc_hidden=(32,))


def skew_hyper(weight: float, epochs: int = 40) -> adversarial.GanHyper:
    return adversarial.GanHyper(adversarial_weight=weight, gen=TrainHyper(epochs=epochs, batch_frames=64),
                                disc=TrainHyper(seed=1, learning_rate=3e-3), **SKEW_GAN)


def skew_network(seed: int = 0) -> neural.Network:
    return neural.init_network(NetworkConfig("feedforward", SKEW_DIM, SKEW_MCEP + 3, (32, 32), seed=seed))


@dataclass
class SkewResult:
    baseline_slope: float
    gan_slope: float
    target_slope: float
    source_slope: float

    @property
    def moved_toward_target(self) -> bool:
        return abs(self.gan_slope - self.target_slope) < abs(self.baseline_slope - self.target_slope)


def prosody_skew(weight: float = 0.5, seed: int = 0, epochs: int = 40) -> SkewResult:
    gen, real = prosody_skew_data(seed)
    pairs = [(x, neural.params_to_targets(p)) for x, p in gen]
    layout = OutputLayout(SKEW_MCEP, 1)

    def mean_slope(net, stats):
        return float(np.mean([final_quarter_slope(neural.predict_params(net, x, stats, layout).lf0)
                              for x, _ in gen]))

    base, _, _, st0 = adversarial.gan_train(skew_network(), pairs, real, skew_hyper(0.0, epochs))
    g, _, _, st1 = adversarial.gan_train(skew_network(), pairs, real, skew_hyper(weight, epochs))
    return SkewResult(mean_slope(base, st0), mean_slope(g, st1),
                      float(np.mean([final_quarter_slope(p.lf0) for p in real])),
                      float(np.mean([final_quarter_slope(p.lf0) for _, p in gen])))


def write_skew_corpora(out_dir, seed: int = 0):
    """Store the prosody-skew data as manifests so the pipeline wrapper can be exercised on it.

    Returns ``(generator_manifest, target_manifest)``; PPGs carry the tag
    ``ja`` and every record points at a params file instead of a wav.
    """
    gen, real = prosody_skew_data(seed)
    os.makedirs(out_dir, exist_ok=True)
    g_entries, t_entries = [], []
    for i, (x, p) in enumerate(gen):
        ppg = os.path.abspath(os.path.join(out_dir, f"gen{i:03d}.ja.ppg"))
        write_ppg(ppg, pipeline.PpgMatrix(x, "ja"))
        prm = os.path.abspath(os.path.join(out_dir, f"gen{i:03d}.prm"))
        pipeline.save_params(prm, p)
        g_entries.append(pipeline.UtteranceRecord(f"gen{i:03d}", None, {"ja": ppg}, prm))
    for i, p in enumerate(real):
        prm = os.path.abspath(os.path.join(out_dir, f"real{i:03d}.prm"))
        pipeline.save_params(prm, p)
        t_entries.append(pipeline.UtteranceRecord(f"real{i:03d}", None, {}, prm))
    gm = pipeline.CorpusManifest(g_entries, "skew-gen", "skew", "ja")
    tm = pipeline.CorpusManifest(t_entries, "skew-real", "skew", "ja")
    pipeline.write_manifest(os.path.join(out_dir, "gen.tsv"), gm)
    pipeline.write_manifest(os.path.join(out_dir, "target.tsv"), tm)
    return gm, tm


SKEW_ANALYSIS = AnalysisConfig(mcep_order=SKEW_MCEP - 1)

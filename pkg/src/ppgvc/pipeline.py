"""End-to-end workflows: corpus manifests, feature caching, training, conversion.

Every conversion, whether of recorded speech (corpus conversion), of a GAN
generator's input, or of TTS output (post-processing), goes through
:func:`convert_utterance`.  The approaches differ only in which data reach it.

Manifest format (UTF-8, tab separated, one utterance per line)::

    #@ corpus_id=oracle
    #@ speaker_id=spk
    # free comment
    utt0001<TAB>wav/utt0001.wav<TAB>ja=ppg/utt0001.ja.ppg,zh=...<TAB>params=truth/utt0001.prm

The wav column may be ``-`` when a params file is given; the PPG column may be
``-`` for corpora used only as parameter targets.  Relative paths resolve
against the manifest's directory.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import adversarial, neural
from .audio import Waveform, read_wav, write_wav
from .errors import (DimensionMismatch, EmptyInput, FrameCountMismatch, IoError, LanguageMismatch,
                     MissingPpg, ParseError, PpgVcError, SampleRateMismatch)
from .features import (AnalysisConfig, SpeechParams, analyze, encode_lf0, frame_signal, logspec_to_mcep,
                       n_frames_for)
from .neural import Checkpoint, NetworkConfig, OutputLayout, TrainHyper
from .ppg import (LANGUAGES, PpgMatrix, align_to_params, context_stack, language_rank, load_ppg,
                  merge_multilingual, oracle_ppg, write_ppg)
from .vocoder import SynthesisConfig, synthesize_with_info

# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True, eq=False)
class UtteranceRecord:
    id: str
    wav_path: str | None
    ppg_paths: dict = field(default_factory=dict)
    params_path: str | None = None

    @property
    def languages(self):
        return tuple(sorted(self.ppg_paths, key=language_rank))


@dataclass(eq=False)
class CorpusManifest:
    entries: list
    corpus_id: str = ""
    speaker_id: str = ""
    language: str = ""

    def __post_init__(self):
        seen = set()
        for r in self.entries:
            if r.id in seen:
                raise ParseError(f"duplicate utterance id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.entries)

    def subset(self, ids) -> "CorpusManifest":
        keep = set(ids)
        return replace(self, entries=[r for r in self.entries if r.id in keep])


_META_KEYS = ("corpus_id", "speaker_id", "language")


def _resolve(base, p):
    if p in (None, "", "-"):
        return None
    return os.path.normpath(os.path.join(base, p))


def parse_manifest(text: str, base_dir: str = ".", check_files: bool = True, source="<manifest>") -> CorpusManifest:
    meta, entries = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r")
        if line.startswith("#@"):
            key, sep, value = line[2:].strip().partition("=")
            if not sep or key.strip() not in _META_KEYS:
                raise ParseError(f"{source}:{lineno}: bad metadata line {line!r}")
            meta[key.strip()] = value.strip()
            continue
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if not 2 <= len(cols) <= 4:
            raise ParseError(f"{source}:{lineno}: expected 2 to 4 tab-separated columns, got {len(cols)}")
        uid = cols[0].strip()
        if not uid:
            raise ParseError(f"{source}:{lineno}: empty utterance id")
        ppgs = {}
        if len(cols) > 2 and cols[2].strip() not in ("", "-"):
            for item in cols[2].split(","):
                lang, sep, path = item.partition("=")
                if not sep or not lang.strip() or not path.strip():
                    raise ParseError(f"{source}:{lineno}: PPG entry {item!r} is not lang=path")
                if lang.strip() in ppgs:
                    raise ParseError(f"{source}:{lineno}: language {lang.strip()!r} listed twice")
                ppgs[lang.strip()] = _resolve(base_dir, path.strip())
        params = None
        if len(cols) > 3 and cols[3].strip() not in ("", "-"):
            col = cols[3].strip()
            params = _resolve(base_dir, col[7:] if col.startswith("params=") else col)
        rec = UtteranceRecord(uid, _resolve(base_dir, cols[1].strip()), ppgs, params)
        if rec.wav_path is None and rec.params_path is None:
            raise ParseError(f"{source}:{lineno}: {uid} has neither a wav nor a params file")
        if check_files:
            for p in [rec.wav_path, rec.params_path, *ppgs.values()]:
                if p is not None and not os.path.isfile(p):
                    raise IoError(f"{source}:{lineno}: {uid}: missing file {p}")
        entries.append(rec)
    return CorpusManifest(entries, **meta)


def load_manifest(path, check_files: bool = True) -> CorpusManifest:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, os.path.dirname(os.path.abspath(path)), check_files, str(path))


def format_manifest(m: CorpusManifest, base_dir: str) -> str:
    def rel(p):
        return "-" if p is None else os.path.relpath(p, base_dir).replace(os.sep, "/")

    lines = [f"#@ {k}={getattr(m, k)}" for k in _META_KEYS if getattr(m, k)]
    for r in m.entries:
        ppg = ",".join(f"{lang}={rel(r.ppg_paths[lang])}" for lang in r.languages) or "-"
        cols = [r.id, rel(r.wav_path), ppg]
        if r.params_path is not None:
            cols.append("params=" + rel(r.params_path))
        lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"


def write_manifest(path, m: CorpusManifest) -> None:
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(format_manifest(m, base))
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# cached speech parameters
#
#   b"PPGVCPRM" | u32 version | 32-byte sha256 of the source | u32 T | u32 mcep_dim | u32 bap_dim
#   | f32 frame_shift_ms | mcep, lf0, vuv (0/1), bap as float32 blobs

PARAMS_MAGIC = b"PPGVCPRM"
PARAMS_VERSION = 1
_PARAMS_HEAD = struct.Struct("<I32sIIIf")
NO_HASH = bytes(32)


def dump_params(p: SpeechParams, source_hash: bytes = NO_HASH) -> bytes:
    if len(source_hash) != 32:
        raise ValueError("source hash must be 32 bytes")
    head = _PARAMS_HEAD.pack(PARAMS_VERSION, source_hash, p.n_frames, p.mcep.shape[1], p.bap.shape[1],
                             p.frame_shift_ms)
    blobs = [np.ascontiguousarray(a, dtype="<f4").tobytes()
             for a in (p.mcep, p.lf0, p.vuv.astype(np.float32), p.bap)]
    return PARAMS_MAGIC + head + b"".join(blobs)


def parse_params(buf: bytes, source="<params>"):
    """Returns ``(SpeechParams, source_hash)``."""
    if buf[:8] != PARAMS_MAGIC:
        raise ParseError(f"{source}: not a params file (bad magic)")
    try:
        version, digest, T, M, B, shift = _PARAMS_HEAD.unpack_from(buf, 8)
    except struct.error as exc:
        raise ParseError(f"{source}: truncated header") from exc
    if version != PARAMS_VERSION:
        raise ParseError(f"{source}: unsupported params version {version}")
    if M == 0 or B == 0:
        raise ParseError(f"{source}: zero-width stream")
    off = 8 + _PARAMS_HEAD.size
    n = T * (M + 2 + B)
    if len(buf) - off != 4 * n:
        raise ParseError(f"{source}: payload size does not match T={T}, dims={M}/{B}")
    flat = np.frombuffer(buf, dtype="<f4", offset=off).astype(np.float64)
    mcep = flat[:T * M].reshape(T, M)
    lf0 = flat[T * M:T * (M + 1)]
    vuv = flat[T * (M + 1):T * (M + 2)] > 0.5
    bap = flat[T * (M + 2):].reshape(T, B)
    if not np.all(np.isfinite(flat)):
        raise ParseError(f"{source}: non-finite values")
    return SpeechParams(mcep, lf0, vuv, bap, float(shift)), digest


def save_params(path, p: SpeechParams, source_hash: bytes = NO_HASH) -> None:
    try:
        with open(path, "wb") as f:
            f.write(dump_params(p, source_hash))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_params(path):
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return parse_params(buf, str(path))


def source_hash(wav_path, cfg: AnalysisConfig) -> bytes:
    """Cache key: sha256 over the wav bytes and the analysis settings."""
    h = hashlib.sha256()
    try:
        with open(wav_path, "rb") as f:
            h.update(f.read())
    except OSError as exc:
        raise IoError(f"cannot read {wav_path}: {exc}") from exc
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8"))
    return h.digest()


def _read_checked(rec: UtteranceRecord, cfg: AnalysisConfig) -> Waveform:
    try:
        return read_wav(rec.wav_path, expected_rate=cfg.sample_rate)
    except SampleRateMismatch as exc:
        raise SampleRateMismatch(f"{rec.id}: {exc}") from exc


def record_params(rec: UtteranceRecord, cfg: AnalysisConfig = AnalysisConfig(), cache_dir=None):
    """Speech parameters of a record: its params file, a valid cache entry, or fresh analysis.

    Returns ``(params, status)`` with status ``"file"``, ``"cached"`` or ``"computed"``.
    """
    if rec.params_path is not None:
        return load_params(rec.params_path)[0], "file"
    if rec.wav_path is None:
        raise IoError(f"{rec.id}: no wav and no params file")
    digest = source_hash(rec.wav_path, cfg)
    cache = os.path.join(cache_dir, f"{rec.id}.prm") if cache_dir else None
    if cache and os.path.isfile(cache):
        try:
            p, old = load_params(cache)
            if old == digest:
                return p, "cached"
        except ParseError:
            pass
    p = analyze(_read_checked(rec, cfg), cfg)
    if cache:
        try:
            os.makedirs(cache_dir, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create cache directory {cache_dir}: {exc}") from exc
        save_params(cache, p, digest)
        p = load_params(cache)[0]  # callers see the stored float32 values either way
    return p, "computed"


def _fan_out(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def extract_corpus(manifest: CorpusManifest, cfg: AnalysisConfig, cache_dir, jobs: int = 1):
    """Populate a params cache for every record and return ``(manifest_with_params, counts)``."""
    if not manifest.entries:
        raise EmptyInput("empty manifest")
    try:
        os.makedirs(cache_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create cache directory {cache_dir}: {exc}") from exc

    def one(rec):
        if rec.wav_path is None:
            return rec, "file"
        p, status = record_params(replace(rec, params_path=None), cfg, cache_dir)
        return replace(rec, params_path=os.path.abspath(os.path.join(cache_dir, f"{rec.id}.prm"))), status

    results = _fan_out(one, manifest.entries, jobs)
    counts = {"computed": 0, "cached": 0, "file": 0}
    for _, s in results:
        counts[s] += 1
    return replace(manifest, entries=[r for r, _ in results]), counts


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class ModelSpec:
    """Network shape for the PPG-to-parameter model; input and output widths come from the data."""

    kind: str = "feedforward"
    hidden: tuple | None = None  # None = the full-size default for ``kind``
    context_width: int = 2
    seed: int = 0
    post_filter: bool = False

    def layers(self):
        return tuple(self.hidden) if self.hidden is not None else neural.DEFAULT_HIDDEN[self.kind]

    def to_dict(self):
        return {"kind": self.kind, "hidden": list(self.layers()), "context_width": self.context_width,
                "seed": self.seed, "post_filter": self.post_filter}


def _merged_ppg(rec: UtteranceRecord, languages):
    if not rec.ppg_paths:
        raise MissingPpg(f"{rec.id}: no PPG files")
    missing = [lang for lang in languages if lang not in rec.ppg_paths]
    if missing:
        raise MissingPpg(f"{rec.id}: no PPG for language(s) {', '.join(missing)}")
    return merge_multilingual([load_ppg(rec.ppg_paths[lang], expected_language=lang) for lang in languages])


def _default_languages(manifest: CorpusManifest):
    if not manifest.entries:
        raise EmptyInput("empty manifest")
    return manifest.entries[0].languages


def prepare_pairs(manifest: CorpusManifest, languages, analysis: AnalysisConfig, context_width: int,
                  cache_dir=None, slack: int = 2):
    """``[(stacked PPG, SpeechParams)]`` and the PPG segment layout shared by all records."""
    if not manifest.entries:
        raise EmptyInput("empty manifest")
    out, segments = [], None
    for rec in manifest.entries:
        m = _merged_ppg(rec, languages)
        if segments is None:
            segments = m.segments
        elif m.segments != segments:
            raise DimensionMismatch(f"{rec.id}: PPG layout {m.segments} differs from {segments}")
        p, _ = record_params(rec, analysis, cache_dir)
        m, p = align_to_params(m, p, slack)
        out.append((context_stack(m, context_width), p))
    return out, segments


def _round_trip(ck: Checkpoint) -> Checkpoint:
    # the stored weights are float32; hand back exactly what a reload would see
    return neural.parse_checkpoint(neural.dump_checkpoint(ck))


def _model_meta(manifest, languages, segments, spec, analysis, approach):
    return {
        "approach": approach,
        "languages": list(languages),
        "segments": [[lang, int(d)] for lang, d in segments],
        "context_width": spec.context_width,
        "post_filter": spec.post_filter,
        "analysis": analysis.to_dict(),
        "speaker_id": manifest.speaker_id,
        "corpus_id": manifest.corpus_id,
    }


def _combine(manifests) -> CorpusManifest:
    manifests = list(manifests) if isinstance(manifests, (list, tuple)) else [manifests]
    if not manifests:
        raise EmptyInput("no manifests")
    entries = [r for m in manifests for r in m.entries]
    head = manifests[0]
    return CorpusManifest(entries, head.corpus_id, head.speaker_id, head.language)


def train_vc(manifest, languages=None, spec: ModelSpec = ModelSpec(), hyper: TrainHyper = TrainHyper(),
             analysis: AnalysisConfig = AnalysisConfig(), cache_dir=None, slack: int = 2):
    """Train the multilingual-PPG to speech-parameter model.

    Returns ``(checkpoint, history)``; the trailing ``hyper.valid_fraction`` of
    the records is the validation set.
    """
    manifest = _combine(manifest)
    languages = tuple(sorted(languages or _default_languages(manifest), key=language_rank))
    data, segments = prepare_pairs(manifest, languages, analysis, spec.context_width, cache_dir, slack)
    layout = OutputLayout(analysis.mcep_dim, analysis.bap_bands)
    pairs = [(x, neural.params_to_targets(p)) for x, p in data]
    cfg = NetworkConfig(spec.kind, pairs[0][0].shape[1], layout.dim, spec.layers(), seed=spec.seed)
    best, history, stats = neural.train(neural.init_network(cfg), pairs, hyper)
    meta = _model_meta(manifest, languages, segments, spec, analysis, "vc")
    meta["train"] = hyper.to_dict()
    return _round_trip(Checkpoint(best, stats, layout, meta)), history


def build_gan_model(gen_manifests, target_manifest: CorpusManifest, languages=None,
                    spec: ModelSpec = ModelSpec(), hyper: adversarial.GanHyper = adversarial.GanHyper(),
                    analysis: AnalysisConfig = AnalysisConfig(), cache_dir=None, slack: int = 2,
                    init: Checkpoint | None = None):
    """Adversarially trained generator.

    Whether the discriminator learns from original target-speaker speech or
    from converted multilingual corpora is decided solely by
    ``target_manifest``.  With ``init`` the generator is fine-tuned from that
    checkpoint (its weights, normalisation statistics, languages, context
    width and analysis settings all carry over, overriding ``languages``,
    ``spec`` and ``analysis``); otherwise it starts from a fresh
    initialisation.  Returns ``(checkpoint, discriminator, history)``.
    """
    gen = _combine(gen_manifests)
    if not target_manifest.entries:
        raise EmptyInput("empty target manifest")
    if init is not None:
        languages = tuple(init.meta["languages"])
        analysis = checkpoint_analysis(init)
        c = init.network.config
        spec = ModelSpec(c.kind, tuple(c.hidden), int(init.meta["context_width"]), c.seed,
                         bool(init.meta.get("post_filter", False)))
    languages = tuple(sorted(languages or _default_languages(gen), key=language_rank))
    data, segments = prepare_pairs(gen, languages, analysis, spec.context_width, cache_dir, slack)
    targets = [record_params(r, analysis, cache_dir)[0] for r in target_manifest.entries]
    layout = OutputLayout(analysis.mcep_dim, analysis.bap_bands)
    pairs = [(x, neural.params_to_targets(p)) for x, p in data]
    if init is None:
        cfg = NetworkConfig(spec.kind, pairs[0][0].shape[1], layout.dim, spec.layers(), seed=spec.seed)
        generator, stats = neural.init_network(cfg), None
    else:
        want = [tuple(x) for x in init.meta["segments"]]
        if list(segments) != want:
            raise DimensionMismatch(f"PPG layout {list(segments)} differs from the initial checkpoint's {want}")
        generator, stats = copy.deepcopy(init.network), init.stats
    best, disc, history, stats = adversarial.gan_train(generator, pairs, targets, hyper, stats=stats)
    meta = _model_meta(gen, languages, segments, spec, analysis, "gan")
    meta["gan"] = {"adversarial_weight": hyper.adversarial_weight, "window_frames": hyper.window_frames,
                   "disc_steps": hyper.disc_steps, "windows_per_step": hyper.windows_per_step,
                   "disc_hidden": list(hyper.disc_hidden), "target_corpus": target_manifest.corpus_id,
                   "disc_train": hyper.disc.to_dict(),
                   "init": None if init is None else init.meta.get("corpus_id", "")}
    meta["train"] = hyper.gen.to_dict()
    return _round_trip(Checkpoint(best, stats, layout, meta)), disc, history


# ---------------------------------------------------------------------------
# conversion


@dataclass(eq=False)
class ConversionResult:
    wave: Waveform
    params: SpeechParams
    notes: list = field(default_factory=list)
    normalized: bool = False


def checkpoint_analysis(ck: Checkpoint) -> AnalysisConfig:
    return AnalysisConfig.from_dict(ck.meta["analysis"])


def synthesis_config(ck: Checkpoint, seed: int = 0) -> SynthesisConfig:
    a = checkpoint_analysis(ck)
    return SynthesisConfig(a.sample_rate, a.frame_shift_ms, a.fft_size, a.warp_alpha, a.spectral_floor, seed)


def convert_utterance(ck: Checkpoint, record: UtteranceRecord, synth: SynthesisConfig | None = None,
                      wave: Waveform | None = None, slack: int = 2) -> ConversionResult:
    """Merge the record's PPGs, predict speech parameters and render them.

    The source wav (or ``wave``, if given) is only checked for sample rate and
    a frame count compatible with the PPGs.
    """
    languages = tuple(ck.meta["languages"])
    if not record.ppg_paths:
        raise MissingPpg(f"{record.id}: no PPG files")
    if not set(languages) <= set(record.ppg_paths):
        raise LanguageMismatch(f"{record.id}: model needs PPGs for {','.join(languages)}, "
                               f"record has {','.join(record.languages)}")
    analysis = checkpoint_analysis(ck)
    synth = synth or synthesis_config(ck)
    if wave is None and record.wav_path is not None:
        wave = _read_checked(record, analysis)
    if wave is not None and wave.sample_rate != analysis.sample_rate:
        raise SampleRateMismatch(f"{record.id}: input at {wave.sample_rate} Hz, model expects {analysis.sample_rate} Hz")
    m = _merged_ppg(record, languages)
    segments = tuple((lang, d) for lang, d in ck.meta["segments"])
    if m.segments != segments:
        raise DimensionMismatch(f"{record.id}: PPG layout {m.segments}, model expects {segments}")
    if wave is not None:
        t_wav = n_frames_for(len(wave), analysis)
        if abs(t_wav - m.n_frames) > slack:
            raise FrameCountMismatch(f"{record.id}: wav has {t_wav} frames, PPGs have {m.n_frames}")
    X = context_stack(m, int(ck.meta["context_width"]))
    p = neural.predict_params(ck.network, X, ck.stats, ck.layout, analysis.f0_floor, analysis.f0_ceil,
                              bool(ck.meta.get("post_filter", False)))
    out, info = synthesize_with_info(p, synth)
    notes = ["output peak-normalised"] if info["normalized"] else []
    return ConversionResult(out, p, notes, info["normalized"])


def convert_corpus(src: CorpusManifest, ck: Checkpoint, out_dir, jobs: int = 1,
                   synth: SynthesisConfig | None = None):
    """Convert every record; returns ``(converted_manifest, failures)``.

    Writes ``wav/<id>.wav``, ``params/<id>.prm``, ``manifest.tsv`` and
    ``failures.tsv`` under ``out_dir``.  A failing utterance is listed in the
    failures, the others still convert.
    """
    if not src.entries:
        raise EmptyInput("empty manifest")
    wav_dir, prm_dir = os.path.join(out_dir, "wav"), os.path.join(out_dir, "params")
    try:
        os.makedirs(wav_dir, exist_ok=True)
        os.makedirs(prm_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise IoError(f"output directory {out_dir} is not writable")
    analysis = checkpoint_analysis(ck)

    def one(rec):
        try:
            res = convert_utterance(ck, rec, synth)
            wav = os.path.abspath(os.path.join(wav_dir, f"{rec.id}.wav"))
            prm = os.path.abspath(os.path.join(prm_dir, f"{rec.id}.prm"))
            write_wav(wav, res.wave)
            save_params(prm, res.params, source_hash(wav, analysis))
            return replace(rec, wav_path=wav, params_path=prm), None
        except (PpgVcError, OSError) as exc:
            return None, (rec.id, f"{type(exc).__name__}: {exc}")

    results = _fan_out(one, src.entries, jobs)
    converted = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    speaker = ck.meta.get("speaker_id", "")
    out = CorpusManifest(converted, f"{src.corpus_id}@{speaker}" if src.corpus_id else speaker, speaker,
                         src.language)
    write_manifest(os.path.join(out_dir, "manifest.tsv"), out)
    try:
        with open(os.path.join(out_dir, "failures.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for uid, msg in failures:
                f.write(f"{uid}\t{msg}\n")
    except OSError as exc:
        raise IoError(f"cannot write failure list: {exc}") from exc
    return out, failures


TTS_MISMATCH_NOTE = ("input is synthesized speech while the model was trained on recorded speech; "
                     "expect quality loss from this train/test mismatch")


def postprocess_tts(wav_in, ppg_paths, ck: Checkpoint, synth: SynthesisConfig | None = None,
                    uid: str = "tts") -> ConversionResult:
    """Convert TTS output with the regular conversion path and flag the domain mismatch."""
    if not ppg_paths:
        raise MissingPpg(f"{uid}: no PPGs supplied for the synthesized input")
    if isinstance(wav_in, Waveform):
        rec, wave = UtteranceRecord(uid, None, dict(ppg_paths)), wav_in
    else:
        rec, wave = UtteranceRecord(uid, str(wav_in), dict(ppg_paths)), None
    res = convert_utterance(ck, rec, synth, wave=wave)
    res.notes.insert(0, TTS_MISMATCH_NOTE)
    return res


# ---------------------------------------------------------------------------
# oracle corpus


def _lang_seed(lang: str) -> int:
    return zlib.crc32(lang.encode("utf-8"))


def _allpole_logamp(formants, n_bins, fs):
    """Natural-log amplitude of a cascade of two-pole resonators on ``n_bins`` points in [0, pi]."""
    w = np.linspace(0.0, np.pi, n_bins)
    z = np.exp(-1j * w)
    out = np.zeros(n_bins)
    for f, bw in formants:
        r = np.exp(-np.pi * bw / fs)
        theta = 2 * np.pi * f / fs
        den = (1 - r * np.exp(1j * theta) * z) * (1 - r * np.exp(-1j * theta) * z)
        out -= np.log(np.abs(den))
    return out


def _smooth_frames(x, k):
    """Centred moving average over ``2k + 1`` frames with edge clamping."""
    x = np.asarray(x, dtype=np.float64)
    if k == 0 or x.shape[0] == 0:
        return x
    idx = np.clip(np.arange(x.shape[0])[:, None] + np.arange(-k, k + 1)[None, :], 0, x.shape[0] - 1)
    return x[idx].mean(axis=1)


@dataclass(eq=False)
class OracleInventory:
    """Phone table plus the per-language phone-to-state maps of an oracle corpus."""

    mcep: np.ndarray      # (P, M+1)
    f0: np.ndarray        # (P,), 0 for unvoiced phones
    bap: np.ndarray       # (P, bands)
    states: dict          # language -> (P,) state ids
    dims: dict            # language -> D
    sharpness: float = 10.0
    crossfade: int = 2

    @property
    def n_phones(self) -> int:
        return self.f0.shape[0]

    def ppg(self, phones, lang) -> PpgMatrix:
        return oracle_ppg(self.states[lang][np.asarray(phones, dtype=np.int64)], self.dims[lang],
                          self.sharpness, _lang_seed(lang), language=lang)

    def rows(self, lang) -> np.ndarray:
        """Posterior row emitted for each phone, ``(P, D)``."""
        return self.ppg(np.arange(self.n_phones), lang).values.astype(np.float64)

    def params(self, phones, frame_shift_ms=10.0) -> SpeechParams:
        phones = np.asarray(phones, dtype=np.int64)
        f0 = self.f0[phones]
        vuv = f0 > 0
        lf0, vuv = encode_lf0(f0, vuv)
        bap = np.where(vuv[:, None], self.bap[phones], 0.0)
        k = self.crossfade
        return SpeechParams(_smooth_frames(self.mcep[phones], k), _smooth_frames(lf0, k), vuv,
                            _smooth_frames(bap, k), frame_shift_ms)

    def to_json(self) -> str:
        d = {"mcep": self.mcep.tolist(), "f0": self.f0.tolist(), "bap": self.bap.tolist(),
             "states": {k: v.tolist() for k, v in self.states.items()}, "dims": self.dims,
             "sharpness": self.sharpness, "crossfade": self.crossfade}
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "OracleInventory":
        d = json.loads(text)
        return cls(np.array(d["mcep"]), np.array(d["f0"]), np.array(d["bap"]),
                   {k: np.array(v, dtype=np.int64) for k, v in d["states"].items()},
                   {k: int(v) for k, v in d["dims"].items()}, float(d["sharpness"]), int(d["crossfade"]))


def make_inventory(languages, dims, analysis: AnalysisConfig = AnalysisConfig(), n_phones: int = 16,
                   n_unvoiced: int = 2, seed: int = 0, sharpness: float = 10.0,
                   crossfade: int = 2) -> OracleInventory:
    """Random phone inventory: formant vowels with their own pitch and aperiodicity, plus fricatives."""
    rng = np.random.default_rng([seed, n_phones, 7919])
    fs = analysis.sample_rate
    n_bins = analysis.fft_size // 2 + 1
    mceps, f0s, baps = [], [], []
    for p in range(n_phones):
        if p < n_phones - n_unvoiced:
            formants = [(rng.uniform(300, 850), 130.0), (rng.uniform(950, 2300), 170.0),
                        (rng.uniform(2500, 3400), 250.0)]
            f0 = 160.0 * 2.0 ** rng.uniform(-0.2, 0.2)
            bap = rng.uniform(-30.0, -15.0, analysis.bap_bands)
            level = 0.1
        else:
            formants = [(rng.uniform(min(3500.0, 0.3 * fs), min(6000.0, 0.4 * fs)), 1500.0)]
            f0, bap, level = 0.0, np.zeros(analysis.bap_bands), 0.04
        logamp = _allpole_logamp(formants, n_bins, fs)
        logamp += np.log(level) - 0.5 * np.log(np.mean(np.exp(2 * logamp)))
        mceps.append(logspec_to_mcep(logamp, analysis.mcep_order, analysis.warp_alpha))
        f0s.append(f0)
        baps.append(bap)
    states, dmap = {}, {}
    for lang, d in zip(languages, dims):
        if d <= 0:
            raise DimensionMismatch(f"{lang}: PPG dimension must be positive")
        r = np.random.default_rng([seed, _lang_seed(lang), d])
        states[lang] = r.permutation(d)[:n_phones] if d >= n_phones else np.arange(n_phones) % d
        dmap[lang] = int(d)
    return OracleInventory(np.array(mceps), np.array(f0s), np.array(baps), states, dmap, sharpness, crossfade)


def oracle_phones(index: int, seed: int, n_phones: int, min_frames: int = 6, max_frames: int = 14) -> np.ndarray:
    """Per-frame phone ids of one utterance: 8 to 13 segments of ``min_frames`` to ``max_frames`` frames."""
    rng = np.random.default_rng([seed, index])
    seq, prev = [], -1
    for _ in range(int(rng.integers(8, 14))):
        if prev < 0:
            p = int(rng.integers(0, n_phones))
        else:  # uniform over the phones other than the previous one
            p = int(rng.integers(0, n_phones - 1))
            p += p >= prev
        seq += [p] * int(rng.integers(min_frames, max_frames + 1))
        prev = p
    return np.array(seq, dtype=np.int64)


def make_oracle_corpus(out_dir, n_utts: int = 20, languages=LANGUAGES, dims=(64, 64, 64), seed: int = 0,
                       heldout: int = 0, analysis: AnalysisConfig = AnalysisConfig(),
                       inventory_seed: int = 0, segment_frames=(6, 14), **inventory_kw) -> CorpusManifest:
    """Write a synthetic corpus whose speech parameters are a fixed function of the phone identity.

    Layout under ``out_dir``: ``ppg/``, ``wav/``, ``truth/`` (ground-truth
    params), ``inventory.json``, ``alignments.tsv``, ``manifest.tsv``,
    ``truth.tsv`` and, when ``heldout > 0``, ``train.tsv`` / ``heldout.tsv``.
    """
    languages = tuple(languages)
    dims = tuple(int(d) for d in dims)
    if len(languages) != len(dims):
        raise DimensionMismatch("one dimension per language required")
    if len(set(languages)) != len(languages):
        raise ParseError("duplicate language")
    if n_utts < 1:
        raise EmptyInput("n_utts must be at least 1")
    if not 0 <= heldout < n_utts:
        raise ValueError("heldout must be smaller than n_utts")
    inv = make_inventory(languages, dims, analysis, seed=inventory_seed, **inventory_kw)
    dirs = {k: os.path.join(out_dir, k) for k in ("ppg", "wav", "truth")}
    try:
        for d in dirs.values():
            os.makedirs(d, exist_ok=True)
        with open(os.path.join(out_dir, "inventory.json"), "w", encoding="utf-8") as f:
            f.write(inv.to_json())
    except OSError as exc:
        raise IoError(f"cannot write oracle corpus to {out_dir}: {exc}") from exc
    entries, align = [], []
    for i in range(n_utts):
        uid = f"utt{i:04d}"
        phones = oracle_phones(i, seed, inv.n_phones, *segment_frames)
        ppgs = {}
        for lang in languages:
            path = os.path.abspath(os.path.join(dirs["ppg"], f"{uid}.{lang}.ppg"))
            write_ppg(path, inv.ppg(phones, lang))
            ppgs[lang] = path
        p = inv.params(phones, analysis.frame_shift_ms)
        truth = os.path.abspath(os.path.join(dirs["truth"], f"{uid}.prm"))
        save_params(truth, p)
        cfg = SynthesisConfig(analysis.sample_rate, analysis.frame_shift_ms, analysis.fft_size,
                              analysis.warp_alpha, analysis.spectral_floor, seed=(seed * 1000003 + i) % 2 ** 32)
        wav = os.path.abspath(os.path.join(dirs["wav"], f"{uid}.wav"))
        write_wav(wav, synthesize_with_info(p, cfg)[0])
        entries.append(UtteranceRecord(uid, wav, ppgs, truth))
        align.append(uid + "\t" + ",".join(str(int(x)) for x in phones))
    with open(os.path.join(out_dir, "alignments.tsv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(align) + "\n")
    meta = dict(corpus_id=f"oracle-s{seed}", speaker_id="oracle", language=",".join(languages))
    truth_m = CorpusManifest(entries, **meta)
    plain = CorpusManifest([replace(r, params_path=None) for r in entries], **meta)
    write_manifest(os.path.join(out_dir, "truth.tsv"), truth_m)
    write_manifest(os.path.join(out_dir, "manifest.tsv"), plain)
    if heldout:
        n_train = n_utts - heldout
        write_manifest(os.path.join(out_dir, "train.tsv"), replace(plain, entries=plain.entries[:n_train]))
        write_manifest(os.path.join(out_dir, "heldout.tsv"), replace(plain, entries=plain.entries[n_train:]))
    return plain


def load_inventory(corpus_dir) -> OracleInventory:
    with open(os.path.join(corpus_dir, "inventory.json"), encoding="utf-8") as f:
        return OracleInventory.from_json(f.read())


def load_alignments(corpus_dir) -> dict:
    out = {}
    with open(os.path.join(corpus_dir, "alignments.tsv"), encoding="utf-8") as f:
        for line in f:
            if line.strip():
                uid, seq = line.rstrip("\n").split("\t")
                out[uid] = np.array([int(x) for x in seq.split(",")], dtype=np.int64)
    return out


# ---------------------------------------------------------------------------
# recognizer stand-in


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters equally spaced on the HTK mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    edges = 700.0 * (10.0 ** (np.linspace(0.0, mel(sample_rate / 2.0), n_mels + 2) / 2595.0) - 1.0)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def log_mel(wave: Waveform, cfg: AnalysisConfig = AnalysisConfig(), n_mels: int = 40) -> np.ndarray:
    """Log mel filterbank energies on the analysis frame grid, as a recognizer front end would see them."""
    frames = frame_signal(wave, cfg)
    spec = np.fft.rfft(frames, cfg.fft_size)
    power = spec.real ** 2 + spec.imag ** 2
    return np.log(power @ mel_filterbank(n_mels, cfg.fft_size, cfg.sample_rate).T + 1e-10)


@dataclass(eq=False)
class TemplateRecognizer:
    """Gaussian phone classifier over log mel energies, standing in for a speaker-independent ASR model.

    Each phone has a mean feature vector with a diagonal variance shared by
    all phones.  Log-likelihoods are divided by a temperature calibrated so
    that the average top posterior on the training frames equals
    ``confidence``.  A language's PPG is the phone posterior mixed over the
    oracle rows that language emits for each phone, so input that drifts away
    from the training material yields blurrier PPGs.
    """

    means: np.ndarray
    var: np.ndarray
    temperature: float = 1.0
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def features(self, wave: Waveform) -> np.ndarray:
        return log_mel(wave, self.analysis)

    @classmethod
    def fit(cls, waves, phone_seqs, n_phones: int, analysis: AnalysisConfig = AnalysisConfig(),
            confidence: float = 0.9) -> "TemplateRecognizer":
        if not 0.0 < confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        feats = [log_mel(w, analysis) for w in waves]
        labs = [np.asarray(s) for s in phone_seqs]
        if any(len(lab) < f.shape[0] for f, lab in zip(feats, labs)):
            raise FrameCountMismatch("alignment shorter than the signal")
        F = np.concatenate(feats)
        lab = np.concatenate([lab[:f.shape[0]] for f, lab in zip(feats, labs)])
        means = np.zeros((n_phones, F.shape[1]))
        for k in range(n_phones):
            sel = lab == k
            means[k] = F[sel].mean(axis=0) if sel.any() else np.inf
        resid = F - means[lab]
        var = np.maximum(np.mean(resid * resid, axis=0), 1e-4)
        rec = cls(means, var, 1.0, analysis)
        ll = rec._loglik(F)
        lo, hi = np.log(1e-3), np.log(1e6)
        for _ in range(60):  # the mean top posterior falls as the temperature rises
            mid = 0.5 * (lo + hi)
            if np.mean(np.max(_softmax(ll / np.exp(mid)), axis=1)) > confidence:
                lo = mid
            else:
                hi = mid
        rec.temperature = float(np.exp(0.5 * (lo + hi)))
        return rec

    def _loglik(self, F):
        d = (F[:, None, :] - self.means[None]) ** 2 / self.var
        return -0.5 * np.sum(np.where(np.isfinite(d), d, np.inf), axis=2)

    def posteriors(self, wave: Waveform) -> np.ndarray:
        return _softmax(self._loglik(self.features(wave)) / self.temperature)

    def ppgs(self, wave: Waveform, inv: OracleInventory, languages) -> dict:
        post = self.posteriors(wave)
        return {lang: PpgMatrix(post @ inv.rows(lang), lang, source_model_id="template-recognizer")
                for lang in languages}


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)

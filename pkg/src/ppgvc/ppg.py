"""Phonetic posteriorgrams: per-language matrices, file I/O, multilingual merging.

Binary file layout (little-endian)::

    b"PPGF" | u32 version=1 | u8 len | language tag (UTF-8) | u32 T | u32 D | T*D float32, row-major

A text variant is accepted on load: a header line ``T D language`` followed by
``T`` rows of ``D`` whitespace-separated numbers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, DuplicateLanguage, EmptyInput, FrameCountMismatch,
                     IndexOutOfRange, InvalidValue, IoError, LanguageMismatch, ParseError)
from .features import SpeechParams

LANGUAGES = ("ja", "zh", "en")
PPG_MAGIC = b"PPGF"
PPG_VERSION = 1
# output-layer widths of the Japanese, Mandarin and English recognisers
FULL_DIMS = {"ja": 5383, "zh": 5996, "en": 5871}


def language_rank(lang: str):
    """Sort key placing ja, zh, en first and any other tag after them alphabetically."""
    return (LANGUAGES.index(lang), "") if lang in LANGUAGES else (len(LANGUAGES), lang)


@dataclass(frozen=True, eq=False)
class PpgMatrix:
    values: np.ndarray
    language: str
    source_model_id: str = ""
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        if v.ndim != 2 or v.shape[1] == 0:
            raise DimensionMismatch(f"PPG must be T x D with D > 0, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidValue("PPG contains NaN or Inf")
        if not self.language or len(self.language.encode("utf-8")) > 255:
            raise InvalidValue(f"bad language tag {self.language!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class MultiPpg:
    values: np.ndarray
    segments: tuple  # ((language, dim), ...)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def languages(self):
        return tuple(lang for lang, _ in self.segments)

    def split(self) -> dict:
        """Per-language blocks of the concatenated matrix."""
        out, col = {}, 0
        for lang, d in self.segments:
            out[lang] = self.values[:, col:col + d]
            col += d
        return out


# ---------------------------------------------------------------------------
# file I/O

def write_ppg(path, m: PpgMatrix, text: bool = False) -> None:
    try:
        if text:
            with open(path, "w", encoding="utf-8") as f:
                f.write(f"{m.n_frames} {m.dim} {m.language}\n")
                for row in m.values.astype(np.float32):
                    f.write(" ".join(repr(float(v)) for v in row) + "\n")
            return
        tag = m.language.encode("utf-8")
        with open(path, "wb") as f:
            f.write(PPG_MAGIC + struct.pack("<IB", PPG_VERSION, len(tag)) + tag)
            f.write(struct.pack("<II", m.n_frames, m.dim))
            f.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_binary(buf, path):
    try:
        version, taglen = struct.unpack_from("<IB", buf, 4)
        if version != PPG_VERSION:
            raise ParseError(f"{path}: unsupported PPG version {version}")
        tag = buf[9:9 + taglen].decode("utf-8")
        T, D = struct.unpack_from("<II", buf, 9 + taglen)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: truncated or malformed header") from exc
    off = 17 + taglen
    if D == 0:
        raise ParseError(f"{path}: zero-width PPG")
    if len(buf) - off != 4 * T * D:
        raise ParseError(f"{path}: payload holds {len(buf) - off} bytes, header implies {4 * T * D}")
    values = np.frombuffer(buf, dtype="<f4", offset=off).reshape(T, D).astype(np.float32)
    return tag, values


def _parse_text(buf, path):
    try:
        lines = buf.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: neither a binary PPG nor UTF-8 text") from exc
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 3:
        raise ParseError(f"{path}: header must be 'T D language'")
    try:
        T, D = int(head[0]), int(head[1])
    except ValueError as exc:
        raise ParseError(f"{path}: non-integer T/D in header") from exc
    if T < 0 or D <= 0 or len(lines) - 1 != T:
        raise ParseError(f"{path}: header declares {T} rows of width {D}, found {len(lines) - 1} rows")
    values = np.empty((T, D), dtype=np.float64)
    for i, ln in enumerate(lines[1:]):
        tok = ln.split()
        if len(tok) != D:
            raise ParseError(f"{path}: row {i} has {len(tok)} values, expected {D}")
        try:
            values[i] = [float(t) for t in tok]
        except ValueError as exc:
            raise ParseError(f"{path}: row {i}: {exc}") from exc
    return head[2], values


def load_ppg(path, expected_language: str | None = None) -> PpgMatrix:
    """Read a binary or text PPG file and validate it."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if buf[:4] == PPG_MAGIC:
        tag, values = _parse_binary(buf, path)
    else:
        tag, values = _parse_text(buf, path)
    if not np.all(np.isfinite(values)):
        raise InvalidValue(f"{path}: NaN or Inf entry")
    if expected_language is not None and tag != expected_language:
        raise LanguageMismatch(f"{path}: language {tag!r}, expected {expected_language!r}")
    return PpgMatrix(values, tag, source_model_id=str(path))


# ---------------------------------------------------------------------------
# operations

def merge_multilingual(ppgs, alignment_slack: int = 2) -> MultiPpg:
    """Concatenate per-language PPGs frame-wise in canonical (ja, zh, en) order.

    Inputs may differ in length by at most ``alignment_slack`` frames; longer
    ones are truncated at the tail.
    """
    ppgs = list(ppgs)
    if not ppgs:
        raise EmptyInput("no PPG matrices to merge")
    seen = set()
    for m in ppgs:
        if m.language in seen:
            raise DuplicateLanguage(f"language {m.language!r} given twice")
        seen.add(m.language)
    lengths = [m.n_frames for m in ppgs]
    if max(lengths) - min(lengths) > alignment_slack:
        raise FrameCountMismatch(f"PPG lengths {lengths} differ by more than {alignment_slack} frames")
    T = min(lengths)
    ordered = sorted(ppgs, key=lambda m: language_rank(m.language))
    values = np.concatenate([np.asarray(m.values[:T], dtype=np.float64) for m in ordered], axis=1)
    values.setflags(write=False)
    return MultiPpg(values, tuple((m.language, m.dim) for m in ordered))


def _state_perturbation(state, dims, seed):
    return np.random.default_rng([seed, dims, state]).uniform(-0.25, 0.25, dims)


def oracle_ppg(state_sequence, dims: int, sharpness: float = 10.0, seed: int = 0,
               language: str = "synthetic") -> PpgMatrix:
    """Synthetic posteriors concentrated on a given per-frame state sequence.

    Row ``t`` is ``softmax(sharpness * (onehot(s_t) + g_{s_t}))`` where
    ``g_s`` is a fixed seeded perturbation in ``[-0.25, 0.25]``; the margin
    of the one-hot term keeps ``argmax == s_t`` for any positive sharpness.
    """
    states = np.asarray(state_sequence, dtype=np.int64).reshape(-1)
    if dims <= 0:
        raise DimensionMismatch("dims must be positive")
    if sharpness <= 0:
        raise InvalidValue("sharpness must be positive")
    if states.size and (states.min() < 0 or states.max() >= dims):
        raise IndexOutOfRange(f"state id out of range [0, {dims})")
    rows = {}
    for s in np.unique(states):
        z = _state_perturbation(int(s), dims, seed)
        z[s] += 1.0
        z *= sharpness
        z -= z.max()
        e = np.exp(z)
        rows[int(s)] = e / e.sum()
    values = np.array([rows[int(s)] for s in states]).reshape(len(states), dims)
    return PpgMatrix(values, language, source_model_id=f"oracle:seed={seed}")


def context_stack(m, width: int) -> np.ndarray:
    """Stack frames ``t - width .. t + width`` side by side, clamping at the edges."""
    x = m.values if isinstance(m, MultiPpg) else np.asarray(m, dtype=np.float64)
    if width < 0:
        raise InvalidValue("context width must be >= 0")
    T = x.shape[0]
    if T == 0:
        return np.zeros((0, x.shape[1] * (2 * width + 1)))
    if width == 0:
        return np.array(x, dtype=np.float64)
    idx = np.clip(np.arange(T)[:, None] + np.arange(-width, width + 1)[None, :], 0, T - 1)
    return x[idx].reshape(T, -1)


def align_to_params(m: MultiPpg, p: SpeechParams, slack: int = 2):
    """Truncate a merged PPG and a parameter set to their common length."""
    if abs(m.n_frames - p.n_frames) > slack:
        raise FrameCountMismatch(f"PPG has {m.n_frames} frames, params have {p.n_frames} (slack {slack})")
    T = min(m.n_frames, p.n_frames)
    values = m.values[:T]
    return MultiPpg(values, m.segments), p.truncate(T)
